//! Reproducible experiment runner: configuration files, presets, CSV output
//! and artifact directories.

pub mod config;
pub mod csv_out;
pub mod presets;
pub mod run;

pub use config::{Environment, Experiment, ExperimentConfig, RestartType, FORMAT_VERSION};
pub use csv_out::{emit_csv, format_float, Cell, Table};
pub use presets::{desk_dqn, list_presets, preset, PRESET_NAMES};
pub use run::{exact_policies, run_experiment, MetricSummary, PolicyTables, RunSummary};
