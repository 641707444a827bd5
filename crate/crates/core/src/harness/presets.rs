//! Built-in experiment presets at desk scale (horizons 1e5 to 1e6, three seeds).

use super::config::{Environment, Experiment, ExperimentConfig, FORMAT_VERSION};
use crate::approx::TrainConfig;
use crate::error::{Error, Result};
use crate::schedule::Exploration;
use crate::tabular::Algorithm;

/// Truncation of restart arms in every preset; optimal thresholds are far below it.
pub const PRESET_RESTART_X_MAX: usize = 200;

/// Preset names in catalog order.
pub const PRESET_NAMES: [&str; 8] = [
    "fig1-restart-subsidy",
    "fig2-restart-lip-vs-wip",
    "fig3-nonindexable-alg1",
    "fig4-nonindexable-alg2",
    "fig5-deadline-homog",
    "fig6-deadline-heter",
    "gap-curve",
    "fluid-check",
];

/// Smaller approximator and larger step size than the full-scale network
/// (hidden widths 512, 256, 128 at rate 1e-5), so that runs finish in minutes.
pub fn desk_dqn() -> TrainConfig {
    TrainConfig {
        hidden: vec![64, 64],
        learning_rate: 1e-3,
        ..TrainConfig::default()
    }
}

fn describe(name: &str) -> &'static str {
    match name {
        "fig1-restart-subsidy" => "restart fixture: closed-form and online optimal multiplier",
        "fig2-restart-lip-vs-wip" => "restart fixture: LIP, WIP and random rewards at horizon 1e6",
        "fig3-nonindexable-alg1" => "non-indexable arm, N=10, M=3: relaxed-budget tabular learner",
        "fig4-nonindexable-alg2" => "non-indexable arm, N=10, M=3: hard-budget tabular learner",
        "fig5-deadline-homog" => "deadline arms, N=5, M=2, c=0.8: neural learner and LIP vs WIP",
        "fig6-deadline-heter" => "deadline arms, N=20 in four cost groups, M=8: neural learner",
        "gap-curve" => "restart mix: per-arm optimality gap at N = 20, 100, 500",
        "fluid-check" => "restart fixture: fluid fixed point from three starts",
        _ => "",
    }
}

/// `(name, description)` for every preset.
pub fn list_presets() -> Vec<(&'static str, &'static str)> {
    PRESET_NAMES.iter().map(|&n| (n, describe(n))).collect()
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let restart = Environment::restart_fixture(PRESET_RESTART_X_MAX);
    let nonindexable = Environment::Nonindexable {
        arms: 10,
        budget: 3,
    };
    let experiment = match name {
        "fig1-restart-subsidy" => Experiment::RestartSubsidy {
            env: restart,
            steps: 100_000,
            epsilon: 0.01,
        },
        "fig2-restart-lip-vs-wip" => Experiment::LipVsWip {
            env: restart,
            horizon: 1_000_000,
            whittle_bracket: None,
        },
        "fig3-nonindexable-alg1" | "fig4-nonindexable-alg2" => Experiment::Tabular {
            env: nonindexable,
            algorithm: if name == "fig3-nonindexable-alg1" {
                Algorithm::Relaxed
            } else {
                Algorithm::HardBudget
            },
            steps: 200_000,
            exploration: Exploration::tabular(1.0),
            share_tables: true,
            compare_horizon: 1_000_000,
            whittle_bracket: None,
        },
        "fig5-deadline-homog" => Experiment::Dqn {
            env: Environment::Deadline {
                arms: 5,
                budget: 2,
                cost: 0.8,
            },
            steps: 100_000,
            train: desk_dqn(),
            compare_horizon: 1_000_000,
            whittle_bracket: Some((-20.0, 20.0)),
        },
        "fig6-deadline-heter" => Experiment::Dqn {
            env: Environment::deadline_heterogeneous(5, 8),
            steps: 30_000,
            train: desk_dqn(),
            compare_horizon: 200_000,
            whittle_bracket: Some((-20.0, 20.0)),
        },
        "gap-curve" => Experiment::GapCurve {
            env: restart,
            sizes: vec![20, 100, 500],
            horizon: 100_000,
        },
        "fluid-check" => Experiment::FluidCheck {
            env: restart,
            tol: 1e-10,
            max_iter: 100_000,
        },
        other => return Err(Error::Config(format!("unknown preset '{other}'"))),
    };
    Ok(ExperimentConfig {
        version: FORMAT_VERSION,
        name: name.to_owned(),
        seeds: vec![1, 2, 3],
        output_dir: None,
        experiment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_the_eight_presets() {
        let names: Vec<&str> = list_presets().iter().map(|p| p.0).collect();
        assert_eq!(names.len(), 8);
        assert_eq!(names, PRESET_NAMES.to_vec());
        assert!(list_presets().iter().all(|p| !p.1.is_empty()));
        assert!(preset("fig7").is_err());
    }

    #[test]
    fn every_preset_validates_and_round_trips() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(cfg, again, "{name}");
        }
    }

    #[test]
    fn heterogeneous_preset_has_four_groups_of_five() {
        let cfg = preset("fig6-deadline-heter").unwrap();
        let inst = cfg.experiment.env().instance().unwrap();
        assert_eq!(inst.num_arms(), 20);
        assert_eq!(inst.types().len(), 4);
        assert!(inst.types().iter().all(|t| t.count() == 5));
    }
}
