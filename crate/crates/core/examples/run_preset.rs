//! Runs a named experiment preset at reduced size and writes its artifact
//! directory (per-seed CSVs, summary and manifest).
//!
//! Run with `cargo run --release --example run_preset -- fig2-restart-lip-vs-wip /tmp/out`.

use std::path::PathBuf;

use restless_lip::harness::{format_float, preset, run_experiment, Experiment, PRESET_NAMES};

fn main() -> restless_lip::Result<()> {
    let mut args = std::env::args().skip(1);
    let name = args
        .next()
        .unwrap_or_else(|| "fig2-restart-lip-vs-wip".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs".into())).join(&name);
    if !PRESET_NAMES.contains(&name.as_str()) {
        eprintln!("unknown preset; choose one of {PRESET_NAMES:?}");
        std::process::exit(2);
    }
    let mut config = preset(&name)?;
    match &mut config.experiment {
        Experiment::RestartSubsidy { steps, .. } => *steps = 20_000,
        Experiment::LipVsWip { horizon, .. } => *horizon = 100_000,
        Experiment::Tabular {
            compare_horizon, ..
        } => *compare_horizon = 100_000,
        Experiment::Dqn {
            steps,
            compare_horizon,
            ..
        } => {
            *steps = 2_000;
            *compare_horizon = 20_000;
        }
        Experiment::GapCurve { horizon, .. } => *horizon = 10_000,
        Experiment::FluidCheck { .. } => {}
    }
    let summary = run_experiment(&config, Some(&out), 3)?;
    println!("artifacts in {}", summary.directory.display());
    for metric in &summary.metrics {
        println!("{:>28}  {}", metric.name, format_float(metric.median));
    }
    Ok(())
}
