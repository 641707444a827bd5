//! Closed-form solution of the restart (freshness) model.
//!
//! Under a threshold policy `x̄` an arm idles through states `1..x̄−1` and then
//! probes until the first success. Renewal arguments give the gain of every
//! threshold, the optimal threshold, the relative values and finally the
//! Lagrangian index `γ(x) = λ − p·V(x+1)` without any table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::dual::minimise_convex;
use crate::exact::{DualSolution, Randomization};
use crate::models::{restart_state_index, RestartArmSpec};
use crate::schedule::Schedule;

/// Relative tolerance under which two threshold gains count as tied.
pub const GAIN_TIE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSolution {
    pub threshold: usize,
    pub gain: f64,
    pub lambda: f64,
    pub tilde_x: f64,
    /// Set when the two integer neighbours of `tilde_x` have equal gain.
    pub boundary_tie: bool,
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InputDomain(format!(
            "success probability {p} outside (0, 1]"
        )));
    }
    Ok(())
}

/// Positive root of `p·w·x² + 2w(1−p)x + (2λ − w(1−p)) = 0`.
///
/// Returns `−∞` when the root is not real; that only happens for
/// `λ > w(1−p)/(2p) > 0`, where the gain decreases in the threshold and the
/// arm should always probe.
pub fn continuous_threshold(p: f64, w: f64, lambda: f64) -> Result<f64> {
    check_p(p)?;
    let disc = (1.0 - p) - 2.0 * lambda * p / w;
    if disc < 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((disc.sqrt() - (1.0 - p)) / p)
}

fn cycle_numerator(p: f64, w: f64, x_bar: f64) -> f64 {
    -w * (x_bar - 1.0) * x_bar / 2.0 - w * ((x_bar - 1.0) / p + 1.0 / (p * p))
}

fn cycle_length(p: f64, x_bar: f64) -> f64 {
    x_bar - 1.0 + 1.0 / p
}

/// Long-run average of `−w·x + λ·u` under threshold `x_bar ≥ 1`.
pub fn cycle_gain(p: f64, w: f64, lambda: f64, x_bar: usize) -> Result<f64> {
    check_p(p)?;
    if x_bar == 0 {
        return Err(Error::InputDomain("threshold must be at least 1".into()));
    }
    let x = x_bar as f64;
    Ok((cycle_numerator(p, w, x) + lambda / p) / cycle_length(p, x))
}

/// Best of the two integer neighbours of the continuous root, clamped at 1.
/// A tie resolves to the smaller threshold.
pub fn optimal_gain(p: f64, w: f64, lambda: f64) -> Result<RestartSolution> {
    let tilde_x = continuous_threshold(p, w, lambda)?;
    let lo = if tilde_x.is_finite() {
        (tilde_x.floor().max(1.0)) as usize
    } else {
        1
    };
    let hi = if tilde_x.is_finite() && tilde_x >= 1.0 {
        lo + 1
    } else {
        1
    };
    let g_lo = cycle_gain(p, w, lambda, lo)?;
    let g_hi = cycle_gain(p, w, lambda, hi)?;
    let tie = hi != lo && (g_lo - g_hi).abs() <= GAIN_TIE_TOL * (1.0 + g_lo.abs());
    let (threshold, gain) = if g_hi > g_lo && !tie {
        (hi, g_hi)
    } else {
        (lo, g_lo)
    };
    Ok(RestartSolution {
        threshold,
        gain,
        lambda,
        tilde_x,
        boundary_tie: tie,
    })
}

/// Rate of successful probes (renewal cycles) per step, `1/(x̄ − 1 + 1/p)`.
pub fn cycle_rate(p: f64, x_bar: usize) -> f64 {
    1.0 / cycle_length(p, x_bar as f64)
}

/// Long-run fraction of steps spent probing under threshold `x̄`:
/// `(1/p)/(x̄ − 1 + 1/p) = 1/(1 + p(x̄ − 1))`.
pub fn activation_frequency(p: f64, x_bar: usize) -> f64 {
    1.0 / (1.0 + p * (x_bar as f64 - 1.0))
}

/// Probing fraction when state `k` probes with probability `beta` and states
/// above `k` always probe (interpolates thresholds `k+1` and `k`).
pub fn randomized_activation_frequency(p: f64, k: usize, beta: f64) -> f64 {
    let tail = (1.0 - beta * p) / p;
    (beta + tail) / (k as f64 + tail)
}

/// Relative value function anchored at `V(1) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeValues {
    pub p: f64,
    pub w: f64,
    pub lambda: f64,
    pub gain: f64,
    pub threshold: usize,
    /// Coefficient of the geometric mode, anchored at the threshold:
    /// `V(x) = ax + b + drift·(1−p)^{−(x−x̄)}` on the probing branch.
    pub drift: f64,
}

impl RelativeValues {
    fn slope(&self) -> f64 {
        -self.w / self.p
    }

    fn intercept(&self) -> f64 {
        let p = self.p;
        (p * (self.lambda - self.gain) - self.w * (1.0 - p)) / (p * p)
    }

    fn idle_branch(&self, x: usize) -> f64 {
        let x = x as f64;
        self.gain * (x - 1.0) + self.w * (x - 1.0) * x / 2.0
    }

    /// `V(x)` for `x ≥ 1`; no truncation.
    pub fn value(&self, x: usize) -> f64 {
        assert!(x >= 1, "freshness states start at 1");
        if x < self.threshold {
            return self.idle_branch(x);
        }
        let linear = self.slope() * x as f64 + self.intercept();
        if self.drift == 0.0 {
            linear
        } else {
            let k = (x - self.threshold) as i32;
            linear + self.drift * (1.0 - self.p).powi(-k)
        }
    }

    /// `V(1..=x_max)`, index 0 holding `V(1)`.
    pub fn table(&self, x_max: usize) -> Vec<f64> {
        (1..=x_max).map(|x| self.value(x)).collect()
    }

    /// `γ(x) = λ − p·V(x+1)`.
    pub fn index(&self, x: usize) -> f64 {
        self.lambda - self.p * self.value(x + 1)
    }
}

/// Solves both Bellman branches and glues them at the threshold.
///
/// When `solution` is optimal the geometric mode vanishes analytically, so a
/// mismatch at the rounding level is set to zero instead of being amplified
/// by `(1−p)^{−x}`.
pub fn relative_values(
    spec: &RestartArmSpec,
    lambda: f64,
    solution: &RestartSolution,
) -> Result<RelativeValues> {
    spec.check()?;
    if solution.threshold == 0 {
        return Err(Error::InputDomain("threshold must be at least 1".into()));
    }
    let mut v = RelativeValues {
        p: spec.p,
        w: spec.w,
        lambda,
        gain: solution.gain,
        threshold: solution.threshold,
        drift: 0.0,
    };
    if spec.p < 1.0 {
        let anchor = v.idle_branch(v.threshold);
        let mismatch = anchor - (v.slope() * v.threshold as f64 + v.intercept());
        if mismatch.abs() > 1e-9 * (1.0 + anchor.abs()) {
            v.drift = mismatch;
        }
    }
    Ok(v)
}

/// Lagrangian index of freshness state `x ≥ 1` at multiplier `lambda_star`.
pub fn restart_index(spec: &RestartArmSpec, lambda_star: f64, x: usize) -> Result<f64> {
    if x == 0 {
        return Err(Error::InputDomain("freshness states start at 1".into()));
    }
    let sol = optimal_gain(spec.p, spec.w, lambda_star)?;
    Ok(relative_values(spec, lambda_star, &sol)?.index(x))
}

/// `γ(1..=x_max)` at `lambda_star`.
pub fn restart_index_table(
    spec: &RestartArmSpec,
    lambda_star: f64,
    x_max: usize,
) -> Result<Vec<f64>> {
    let sol = optimal_gain(spec.p, spec.w, lambda_star)?;
    let v = relative_values(spec, lambda_star, &sol)?;
    Ok((1..=x_max).map(|x| v.index(x)).collect())
}

/// Whittle index of state `x`, as a passive subsidy: the multiplier at which
/// thresholds `x` and `x+1` give the same gain, negated.
pub fn restart_whittle(p: f64, w: f64, x: usize) -> Result<f64> {
    check_p(p)?;
    if x == 0 {
        return Err(Error::InputDomain("freshness states start at 1".into()));
    }
    let (a, b) = (x as f64, x as f64 + 1.0);
    let bonus = p
        * (cycle_numerator(p, w, b) * cycle_length(p, a)
            - cycle_numerator(p, w, a) * cycle_length(p, b));
    Ok(-bonus)
}

fn total_arms(types: &[(RestartArmSpec, usize)]) -> Result<usize> {
    let n: usize = types.iter().map(|(_, c)| c).sum();
    if n == 0 {
        return Err(Error::InputDomain("no restart arms".into()));
    }
    for (s, _) in types {
        s.check()?;
    }
    Ok(n)
}

/// `Σ_i g_opt,i(λ) − λ·α·N`.
pub fn restart_dual(types: &[(RestartArmSpec, usize)], lambda: f64, alpha: f64) -> Result<f64> {
    let n = total_arms(types)?;
    let mut total = -lambda * alpha * n as f64;
    for (s, c) in types {
        total += *c as f64 * optimal_gain(s.p, s.w, lambda)?.gain;
    }
    Ok(total)
}

/// Optimal thresholds of each type at `lambda`.
pub fn restart_thresholds(
    types: &[(RestartArmSpec, usize)],
    lambda: f64,
) -> Result<Vec<RestartSolution>> {
    types
        .iter()
        .map(|(s, _)| optimal_gain(s.p, s.w, lambda))
        .collect()
}

/// Default search interval, scaled by the largest weight.
pub fn restart_default_bracket(types: &[(RestartArmSpec, usize)]) -> (f64, f64) {
    let w = types.iter().map(|(s, _)| s.w).fold(0.0, f64::max).max(1e-3);
    (-100.0 * w, 10.0 * w)
}

/// Minimises the restart dual and reports the attained probing fraction.
///
/// If the deterministic thresholds at `λ*` miss `α`, one type is randomized
/// between its two best thresholds: the one whose gains are closest to a tie.
pub fn restart_lambda_star(
    types: &[(RestartArmSpec, usize)],
    alpha: f64,
    bracket: Option<(f64, f64)>,
    tol: f64,
) -> Result<DualSolution> {
    let n = total_arms(types)? as f64;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InputDomain(format!("alpha {alpha} outside (0, 1]")));
    }
    let bracket = bracket.unwrap_or_else(|| restart_default_bracket(types));
    let objective = |l: f64| restart_dual(types, l, alpha);
    let mut lambda_star = minimise_convex(bracket, tol, objective)?;
    let mut value = restart_dual(types, lambda_star, alpha)?;
    if bracket.0 <= 0.0 && 0.0 <= bracket.1 {
        let at_zero = restart_dual(types, 0.0, alpha)?;
        if at_zero <= value + 1e-9 * (1.0 + value.abs()) {
            lambda_star = 0.0;
            value = at_zero;
        }
    }
    let sols = restart_thresholds(types, lambda_star)?;
    let base: f64 = types
        .iter()
        .zip(&sols)
        .map(|((s, c), sol)| *c as f64 * activation_frequency(s.p, sol.threshold))
        .sum();
    let fraction = base / n;
    let randomization = if (fraction - alpha).abs() > 1e-9 && lambda_star != 0.0 {
        restart_randomization(types, &sols, alpha, base, lambda_star)?
    } else {
        None
    };
    Ok(DualSolution {
        lambda_star,
        dual_value: value,
        activation_fraction: fraction,
        randomization,
    })
}

fn restart_randomization(
    types: &[(RestartArmSpec, usize)],
    sols: &[RestartSolution],
    alpha: f64,
    base: f64,
    lambda: f64,
) -> Result<Option<Randomization>> {
    let n: f64 = types.iter().map(|(_, c)| *c as f64).sum();
    let want_more = base / n < alpha;
    // Candidate: (type, randomized state k); k probes w.p. beta, states above k always.
    let mut best: Option<(usize, usize, f64)> = None;
    for (t, ((s, _), sol)) in types.iter().zip(sols).enumerate() {
        let (k, other) = if want_more {
            if sol.threshold < 2 {
                continue;
            }
            (sol.threshold - 1, sol.threshold - 1)
        } else {
            (sol.threshold, sol.threshold + 1)
        };
        let gap = (sol.gain - cycle_gain(s.p, s.w, lambda, other)?).abs();
        if best.is_none_or(|(_, _, b)| gap < b) {
            best = Some((t, k, gap));
        }
    }
    let Some((t, k, _)) = best else {
        return Ok(None);
    };
    let (spec, count) = &types[t];
    let others = base - *count as f64 * activation_frequency(spec.p, sols[t].threshold);
    let fraction_at =
        |beta: f64| (others + *count as f64 * randomized_activation_frequency(spec.p, k, beta)) / n;
    let probability = if fraction_at(1.0) <= alpha {
        1.0
    } else if fraction_at(0.0) >= alpha {
        0.0
    } else {
        let (mut a, mut b) = (0.0_f64, 1.0_f64);
        for _ in 0..60 {
            let mid = 0.5 * (a + b);
            if fraction_at(mid) < alpha {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    };
    Ok(Some(Randomization {
        arm_label: spec.label(),
        state: restart_state_index(k),
        probability,
    }))
}

/// Configuration of the closed-form online multiplier search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineRestartConfig {
    pub budget: usize,
    pub steps: u64,
    pub beta: Schedule,
    pub epsilon: f64,
    pub initial_lambda: f64,
    pub seed: u64,
}

impl OnlineRestartConfig {
    pub fn new(budget: usize, steps: u64, seed: u64) -> Self {
        OnlineRestartConfig {
            budget,
            steps,
            beta: Schedule::LogHarmonic { scale: 5000.0 },
            epsilon: 0.01,
            initial_lambda: 0.0,
            seed,
        }
    }
}

/// Per-step record of the online loop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    /// `λ_n` before the update of step `n`.
    pub lambda: Vec<f64>,
    pub active_count: Vec<u32>,
    /// Total `−Σ w_i x_i` collected at step `n`.
    pub reward: Vec<f64>,
    /// Probing steps per arm over the whole run.
    pub activations: Vec<u64>,
    pub final_lambda: f64,
}

/// Online loop: every step recomputes thresholds and relative values at
/// `λ_n` in closed form, acts ε-greedily on `γ(x) = λ_n − p·V(x+1)` per arm,
/// and moves `λ_{n+1} = λ_n − β(n)(Σ_i a_n^i − M)`.
pub fn online_restart_learner(
    types: &[(RestartArmSpec, usize)],
    config: &OnlineRestartConfig,
) -> Result<RestartTrace> {
    let n = total_arms(types)?;
    if config.budget == 0 || config.budget >= n {
        return Err(Error::InputDomain(format!(
            "budget {} invalid for {n} arms",
            config.budget
        )));
    }
    if !(0.0..=1.0).contains(&config.epsilon) {
        return Err(Error::InputDomain(format!(
            "epsilon {} outside [0, 1]",
            config.epsilon
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arm_type: Vec<usize> = types
        .iter()
        .enumerate()
        .flat_map(|(t, (_, c))| std::iter::repeat_n(t, *c))
        .collect();
    let mut age = vec![1usize; n];
    let mut lambda = config.initial_lambda;
    let cap = config.steps as usize;
    let mut trace = RestartTrace {
        lambda: Vec::with_capacity(cap),
        active_count: Vec::with_capacity(cap),
        reward: Vec::with_capacity(cap),
        activations: vec![0; n],
        final_lambda: lambda,
    };
    for step in 1..=config.steps {
        let values: Vec<RelativeValues> = types
            .iter()
            .map(|(s, _)| {
                let sol = optimal_gain(s.p, s.w, lambda)?;
                relative_values(s, lambda, &sol)
            })
            .collect::<Result<_>>()?;
        let mut active = 0u32;
        let mut reward = 0.0;
        for i in 0..n {
            let t = arm_type[i];
            let spec = &types[t].0;
            reward -= spec.w * age[i] as f64;
            let probe = if rng.random::<f64>() < config.epsilon {
                rng.random::<bool>()
            } else {
                let g = values[t].index(age[i]);
                if g == 0.0 {
                    rng.random::<bool>()
                } else {
                    g > 0.0
                }
            };
            if probe {
                active += 1;
                trace.activations[i] += 1;
                age[i] = if rng.random::<f64>() < spec.p {
                    1
                } else {
                    age[i] + 1
                };
            } else {
                age[i] += 1;
            }
        }
        trace.lambda.push(lambda);
        trace.active_count.push(active);
        trace.reward.push(reward);
        lambda -= config.beta.at(step) * (active as f64 - config.budget as f64);
        if !lambda.is_finite() {
            return Err(Error::NonFinite(format!(
                "multiplier diverged at step {step}"
            )));
        }
    }
    trace.final_lambda = lambda;
    Ok(trace)
}
