//! Step-size and exploration schedules of the online learners.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A step-size sequence indexed by a counter `k ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// `1/⌈k/period⌉`, with `k = 0` mapped to 1.
    Harmonic {
        period: f64,
    },
    /// `1/(⌈k·ln k/scale⌉ + 1)`, with `k = 0` mapped to 1.
    LogHarmonic {
        scale: f64,
    },
    Constant {
        value: f64,
    },
}

impl Schedule {
    pub fn at(&self, k: u64) -> f64 {
        match *self {
            Schedule::Harmonic { period } => {
                let steps = (k as f64 / period).ceil();
                if steps < 1.0 {
                    1.0
                } else {
                    1.0 / steps
                }
            }
            Schedule::LogHarmonic { scale } => {
                if k == 0 {
                    return 1.0;
                }
                let n = k as f64;
                1.0 / ((n * n.ln() / scale).ceil() + 1.0)
            }
            Schedule::Constant { value } => value,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            Schedule::Harmonic { period } => period > 0.0,
            Schedule::LogHarmonic { scale } => scale > 0.0,
            Schedule::Constant { value } => (0.0..=1.0).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid schedule {self:?}")))
        }
    }
}

/// Fast (`alpha`, per visit count) and slow (`beta`, per global step) scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedules {
    pub alpha: Schedule,
    pub beta: Schedule,
}

impl StepSchedules {
    pub fn new(alpha: Schedule, beta: Schedule) -> Result<Self> {
        alpha.check()?;
        beta.check()?;
        Ok(StepSchedules { alpha, beta })
    }

    /// `α(k) = 1/⌈k/500⌉`, `β(n) = 1/(⌈n ln n/5000⌉ + 1)`.
    pub fn default_pair() -> Self {
        StepSchedules {
            alpha: Schedule::Harmonic { period: 500.0 },
            beta: Schedule::LogHarmonic { scale: 5000.0 },
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default_pair()),
            other => Err(Error::Config(format!("unknown schedule family '{other}'"))),
        }
    }
}

impl Default for StepSchedules {
    fn default() -> Self {
        Self::default_pair()
    }
}

/// Multiplicative exploration decay with a floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exploration {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Exploration {
    /// Decay 0.99 per step, floor 0.01.
    pub fn tabular(initial: f64) -> Self {
        Exploration {
            initial,
            decay: 0.99,
            floor: 0.01,
        }
    }

    /// Decay 0.9995 per step, floor 0.01.
    pub fn dqn(initial: f64) -> Self {
        Exploration {
            initial,
            decay: 0.9995,
            floor: 0.01,
        }
    }

    pub fn fixed(epsilon: f64) -> Self {
        Exploration {
            initial: epsilon,
            decay: 1.0,
            floor: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.initial)
            && (0.0..=1.0).contains(&self.decay)
            && (0.0..=1.0).contains(&self.floor);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid exploration settings {self:?}"
            )))
        }
    }

    pub fn next(&self, epsilon: f64) -> f64 {
        (epsilon * self.decay).max(self.floor.min(epsilon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_values() {
        let s = StepSchedules::builtin("default").unwrap();
        assert_eq!(s.beta.at(1), 1.0);
        assert_eq!(s.beta.at(0), 1.0);
        assert_eq!(s.alpha.at(1), 1.0);
        assert_eq!(s.alpha.at(500), 1.0);
        assert_eq!(s.alpha.at(501), 0.5);
        let n = 10_000f64;
        assert_eq!(
            s.beta.at(10_000),
            1.0 / ((n * n.ln() / 5000.0).ceil() + 1.0)
        );
        assert!(StepSchedules::builtin("fast").is_err());
    }

    #[test]
    fn beta_is_small_relative_to_alpha() {
        let s = StepSchedules::default_pair();
        // The ratio behaves like 10/ln k.
        let ratio = |k: u64| s.beta.at(k) / s.alpha.at(k);
        assert!(ratio(1_000_000_000_000) < ratio(1_000_000));
        assert!(ratio(1_000_000_000_000) < 0.4);
    }

    #[test]
    fn exploration_floor() {
        let e = Exploration::tabular(1.0);
        let mut eps = 1.0;
        for _ in 0..10_000 {
            eps = e.next(eps);
        }
        assert_eq!(eps, 0.01);
        assert_eq!(Exploration::fixed(0.0).next(0.0), 0.0);
    }
}
