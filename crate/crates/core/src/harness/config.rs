//! Experiment configuration files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::approx::TrainConfig;
use crate::arm::{ArmModel, BanditInstance};
use crate::error::{Error, Result};
use crate::models::{
    make_deadline_arm, make_nonindexable_arm, make_restart_arm, FreshDistribution, RestartArmSpec,
    DEADLINE_HETEROGENEOUS_COSTS, RESTART_FIXTURE_BUDGET, RESTART_FIXTURE_COUNT,
    RESTART_FIXTURE_TYPES,
};
use crate::schedule::Exploration;
use crate::tabular::Algorithm;

/// Version of the configuration format understood by this build.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestartType {
    pub p: f64,
    pub w: f64,
    pub count: usize,
}

fn fixture_restart_types() -> Vec<RestartType> {
    RESTART_FIXTURE_TYPES
        .iter()
        .map(|&(p, w)| RestartType {
            p,
            w,
            count: RESTART_FIXTURE_COUNT,
        })
        .collect()
}

/// The arms of an experiment and the activation budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Environment {
    /// Restart arms truncated at `x_max`; defaults to the four-type fixture.
    Restart {
        x_max: usize,
        #[serde(default = "fixture_restart_types")]
        types: Vec<RestartType>,
        budget: usize,
    },
    /// The three-state non-indexable arm.
    Nonindexable { arms: usize, budget: usize },
    /// Deadline scheduling arms with a common processing cost.
    Deadline {
        arms: usize,
        budget: usize,
        cost: f64,
    },
    /// Deadline arms in equal groups, one processing cost per group.
    DeadlineGroups {
        costs: Vec<f64>,
        per_group: usize,
        budget: usize,
    },
    /// Identical arms read from an arm JSON file.
    File {
        path: PathBuf,
        arms: usize,
        budget: usize,
    },
}

impl Environment {
    pub fn restart_fixture(x_max: usize) -> Self {
        Environment::Restart {
            x_max,
            types: fixture_restart_types(),
            budget: RESTART_FIXTURE_BUDGET,
        }
    }

    pub fn deadline_heterogeneous(per_group: usize, budget: usize) -> Self {
        Environment::DeadlineGroups {
            costs: DEADLINE_HETEROGENEOUS_COSTS.to_vec(),
            per_group,
            budget,
        }
    }

    pub fn budget(&self) -> usize {
        match self {
            Environment::Restart { budget, .. }
            | Environment::Nonindexable { budget, .. }
            | Environment::Deadline { budget, .. }
            | Environment::DeadlineGroups { budget, .. }
            | Environment::File { budget, .. } => *budget,
        }
    }

    /// Restart arm parameters with counts, for the closed-form routines.
    pub fn restart_types(&self) -> Option<Vec<(RestartArmSpec, usize)>> {
        match self {
            Environment::Restart { x_max, types, .. } => Some(
                types
                    .iter()
                    .map(|t| {
                        (
                            RestartArmSpec {
                                p: t.p,
                                w: t.w,
                                x_max: *x_max,
                            },
                            t.count,
                        )
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Arm models with counts, one entry per type.
    pub fn groups(&self) -> Result<Vec<(ArmModel, usize)>> {
        match self {
            Environment::Restart { .. } => self
                .restart_types()
                .expect("restart environment")
                .into_iter()
                .map(|(s, c)| {
                    s.check()?;
                    Ok((make_restart_arm(s)?, c))
                })
                .collect(),
            Environment::Nonindexable { arms, .. } => Ok(vec![(make_nonindexable_arm(), *arms)]),
            Environment::Deadline { arms, cost, .. } => Ok(vec![(
                make_deadline_arm(*cost, &FreshDistribution::uniform())?.arm,
                *arms,
            )]),
            Environment::DeadlineGroups {
                costs, per_group, ..
            } => costs
                .iter()
                .map(|&c| {
                    Ok((
                        make_deadline_arm(c, &FreshDistribution::uniform())?.arm,
                        *per_group,
                    ))
                })
                .collect(),
            Environment::File { path, arms, .. } => Ok(vec![(ArmModel::load_json(path)?, *arms)]),
        }
    }

    pub fn instance(&self) -> Result<BanditInstance> {
        BanditInstance::from_groups(self.groups()?, self.budget())
    }

    /// `(arm, count)` pairs for the dual routines.
    pub fn mix(&self) -> Result<Vec<(Arc<ArmModel>, usize)>> {
        Ok(self.instance()?.mix())
    }
}

/// What an experiment computes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Closed-form `λ*` of the restart model and the online multiplier search.
    RestartSubsidy {
        env: Environment,
        steps: u64,
        epsilon: f64,
    },
    /// Simulated average reward of LIP, WIP and random activation.
    LipVsWip {
        env: Environment,
        horizon: u64,
        #[serde(default)]
        whittle_bracket: Option<(f64, f64)>,
    },
    /// A tabular learner, then simulations of the learned and exact policies.
    Tabular {
        env: Environment,
        algorithm: Algorithm,
        steps: u64,
        exploration: Exploration,
        #[serde(default = "default_true")]
        share_tables: bool,
        compare_horizon: u64,
        #[serde(default)]
        whittle_bracket: Option<(f64, f64)>,
    },
    /// The neural learner, then simulations of the learned and exact policies.
    Dqn {
        env: Environment,
        steps: u64,
        train: TrainConfig,
        compare_horizon: u64,
        #[serde(default)]
        whittle_bracket: Option<(f64, f64)>,
    },
    /// Per-arm optimality gap of the restart LIP policy across system sizes.
    GapCurve {
        env: Environment,
        sizes: Vec<usize>,
        horizon: u64,
    },
    /// Global-attractor check of the fluid dynamics under LIP.
    FluidCheck {
        env: Environment,
        tol: f64,
        max_iter: usize,
    },
}

fn default_true() -> bool {
    true
}

impl Experiment {
    pub fn env(&self) -> &Environment {
        match self {
            Experiment::RestartSubsidy { env, .. }
            | Experiment::LipVsWip { env, .. }
            | Experiment::Tabular { env, .. }
            | Experiment::Dqn { env, .. }
            | Experiment::GapCurve { env, .. }
            | Experiment::FluidCheck { env, .. } => env,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub experiment: Experiment,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.version != FORMAT_VERSION {
            return bad(format!(
                "config version {} does not match supported version {FORMAT_VERSION}",
                self.version
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds list is empty".into());
        }
        if self.name.is_empty() {
            return bad("name is empty".into());
        }
        let env = self.experiment.env();
        if let Environment::File { .. } = env {
            // The arm file is read when the experiment runs.
        } else {
            env.instance()
                .map_err(|e| Error::Config(format!("environment: {e}")))?;
        }
        match &self.experiment {
            Experiment::RestartSubsidy { env, epsilon, .. } => {
                if env.restart_types().is_none() {
                    return bad("restart-subsidy needs a restart environment".into());
                }
                if !(0.0..=1.0).contains(epsilon) {
                    return bad(format!("epsilon {epsilon} outside [0, 1]"));
                }
            }
            Experiment::Tabular { exploration, .. } => exploration.check()?,
            Experiment::Dqn { train, .. } => train.check()?,
            Experiment::GapCurve { env, sizes, .. } => {
                if env.restart_types().is_none() {
                    return bad("gap-curve needs a restart environment".into());
                }
                if sizes.is_empty() {
                    return bad("gap-curve needs at least one size".into());
                }
            }
            Experiment::FluidCheck { tol, max_iter, .. } => {
                if !(*tol > 0.0) || *max_iter == 0 {
                    return bad("fluid-check needs tol > 0 and max_iter > 0".into());
                }
            }
            Experiment::LipVsWip { .. } => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
version = 1
name = "demo"
seeds = [1, 2]

[experiment]
kind = "lip-vs-wip"
horizon = 1000

[experiment.env]
model = "nonindexable"
arms = 10
budget = 3
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.seeds, vec![1, 2]);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = SAMPLE.replace("horizon = 1000", "horizon = 1000\nhorizn = 5");
        assert!(matches!(
            ExperimentConfig::from_toml(&typo),
            Err(Error::Config(_))
        ));
        let typo = SAMPLE.replace("budget = 3", "budget = 3\nbudgt = 3");
        assert!(ExperimentConfig::from_toml(&typo).is_err());
        let typo = SAMPLE.replace("seeds", "seed");
        assert!(ExperimentConfig::from_toml(&typo).is_err());
    }

    #[test]
    fn empty_seeds_and_wrong_version_fail() {
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("[1, 2]", "[]")).is_err());
        assert!(
            ExperimentConfig::from_toml(&SAMPLE.replace("version = 1", "version = 7")).is_err()
        );
    }

    #[test]
    fn invalid_budget_fails_validation() {
        assert!(ExperimentConfig::from_toml(&SAMPLE.replace("budget = 3", "budget = 10")).is_err());
    }
}
