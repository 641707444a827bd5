//! The Lagrangian dual `D(λ) = Σ_i g_i(λ) − λ·α·N` and its minimisation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::index::TIE_TOL;
use super::rvi::{rvi_q_warm, QTable, RviOptions};
use super::stationary::{activation_rate, stationary_distribution};
use crate::arm::{ArmModel, State};
use crate::error::{Error, Result};

/// `(arm model, number of identical arms)`.
pub type ArmMix = [(Arc<ArmModel>, usize)];

/// Randomization at a single boundary state restoring the activation target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Randomization {
    pub arm_label: String,
    pub state: State,
    /// Probability of activating in `state`.
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda_star: f64,
    pub dual_value: f64,
    /// Long-run fraction of active actions of the deterministic greedy
    /// policies at `lambda_star` (boundary states passive).
    pub activation_fraction: f64,
    pub randomization: Option<Randomization>,
}

fn total_count(mix: &ArmMix) -> Result<usize> {
    let n: usize = mix.iter().map(|(_, c)| c).sum();
    if n == 0 {
        return Err(Error::InputDomain("empty arm mix".into()));
    }
    Ok(n)
}

/// `Σ_i g_i(λ) − λ·α·N` with `g_i` the optimal gain of arm `i` at `λ`.
pub fn dual_value(mix: &ArmMix, lambda: f64, alpha: f64, opts: RviOptions) -> Result<f64> {
    let mut cache = vec![None; mix.len()];
    dual_value_cached(mix, lambda, alpha, opts, &mut cache)
}

fn dual_value_cached(
    mix: &ArmMix,
    lambda: f64,
    alpha: f64,
    opts: RviOptions,
    cache: &mut [Option<QTable>],
) -> Result<f64> {
    let n = total_count(mix)?;
    let mut total = -lambda * alpha * n as f64;
    for ((arm, count), slot) in mix.iter().zip(cache.iter_mut()) {
        let q = rvi_q_warm(arm, lambda, opts, slot.as_ref())?;
        total += *count as f64 * q.gain;
        *slot = Some(q);
    }
    Ok(total)
}

/// Golden-section minimisation of a convex function on `[lo, hi]` down to
/// bracket width `tol`. Returns the final midpoint.
pub fn golden_section<F>(mut lo: f64, mut hi: f64, tol: f64, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Minimises a convex function over a bracket, extending it with doubling
/// steps while the minimum sits at an edge.
pub(crate) fn minimise_convex<F>(bracket: (f64, f64), tol: f64, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) || !(tol > 0.0) {
        return Err(Error::Bracket(format!(
            "invalid bracket [{lo}, {hi}] or tol {tol}"
        )));
    }
    let mut step = (hi - lo).max(1.0);
    for _ in 0..40 {
        let x = golden_section(lo, hi, tol, &mut f)?;
        let at_lo = x - lo <= 2.0 * tol;
        let at_hi = hi - x <= 2.0 * tol;
        if !at_lo && !at_hi {
            return Ok(x);
        }
        // An edge minimiser is genuine when the value rises just outside.
        let fx = f(x)?;
        let outside = if at_lo { x - step } else { x + step };
        let fo = f(outside)?;
        if fo > fx {
            return Ok(x);
        }
        // Equal values bracket the minimum between x and outside.
        let far = if fo == fx {
            outside
        } else if at_lo {
            outside - step
        } else {
            outside + step
        };
        (lo, hi) = if at_lo {
            (far, x + 2.0 * tol)
        } else {
            (x - 2.0 * tol, far)
        };
        step *= 2.0;
    }
    Err(Error::Bracket(format!(
        "minimiser keeps escaping the bracket (last [{lo}, {hi}])"
    )))
}

/// Options for [`optimal_lambda`].
#[derive(Clone, Copy, Debug)]
pub struct DualOptions {
    /// Defaults to `[−10·max|r|, 10·max|r|]`.
    pub bracket: Option<(f64, f64)>,
    pub tol: f64,
    pub rvi: RviOptions,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions {
            bracket: None,
            tol: 1e-7,
            rvi: RviOptions::default(),
        }
    }
}

/// Default bracket `[−10·max|r|, 10·max|r|]` (at least `[−1, 1]`).
pub fn default_bracket(mix: &ArmMix) -> (f64, f64) {
    let r = mix
        .iter()
        .map(|(a, _)| a.max_abs_reward())
        .fold(0.1_f64, f64::max);
    (-10.0 * r, 10.0 * r)
}

struct TypePolicy {
    policy: Vec<f64>,
    rate: f64,
}

fn greedy_rates(
    mix: &ArmMix,
    lambda: f64,
    rvi: RviOptions,
) -> Result<(Vec<TypePolicy>, Vec<QTable>)> {
    let mut out = Vec::with_capacity(mix.len());
    let mut tables = Vec::with_capacity(mix.len());
    for (arm, _) in mix {
        let q = rvi_q_warm(arm, lambda, rvi, None)?;
        let policy = q.greedy_policy(TIE_TOL);
        let pi = stationary_distribution(arm, &policy)?;
        out.push(TypePolicy {
            rate: activation_rate(&policy, &pi),
            policy,
        });
        tables.push(q);
    }
    Ok((out, tables))
}

/// Finds `λ*` minimising the dual, the attained activation fraction and, if
/// that fraction misses `α`, a single-state randomization restoring it.
///
/// When the dual is flat over an interval containing zero, `λ* = 0`.
pub fn optimal_lambda(mix: &ArmMix, alpha: f64, opts: DualOptions) -> Result<DualSolution> {
    let n = total_count(mix)? as f64;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InputDomain(format!("alpha {alpha} outside [0, 1]")));
    }
    for (arm, _) in mix {
        arm.ensure_valid()?;
    }
    let bracket = opts.bracket.unwrap_or_else(|| default_bracket(mix));
    let mut cache = vec![None; mix.len()];
    let mut objective = |l: f64| dual_value_cached(mix, l, alpha, opts.rvi, &mut cache);
    let mut lambda_star = minimise_convex(bracket, opts.tol, &mut objective)?;
    let mut value = objective(lambda_star)?;
    if bracket.0 <= 0.0 && 0.0 <= bracket.1 {
        let at_zero = objective(0.0)?;
        if at_zero <= value + 1e-9 * (1.0 + value.abs()) {
            lambda_star = 0.0;
            value = at_zero;
        }
    }

    let (mid, tables) = greedy_rates(mix, lambda_star, opts.rvi)?;
    let fraction = mix
        .iter()
        .zip(&mid)
        .map(|((_, c), t)| *c as f64 * t.rate)
        .sum::<f64>()
        / n;

    let mut randomization = None;
    if (fraction - alpha).abs() > 1e-9 {
        randomization = boundary_randomization(mix, alpha, &mid, &tables)?;
    }
    Ok(DualSolution {
        lambda_star,
        dual_value: value,
        activation_fraction: fraction,
        randomization,
    })
}

/// Picks the boundary state (smallest `|γ|` among states whose flip moves the
/// fraction toward `α`) and solves for its activation probability.
fn boundary_randomization(
    mix: &ArmMix,
    alpha: f64,
    policies: &[TypePolicy],
    tables: &[QTable],
) -> Result<Option<Randomization>> {
    let n: f64 = mix.iter().map(|(_, c)| *c as f64).sum();
    let base: f64 = mix
        .iter()
        .zip(policies)
        .map(|((_, c), t)| *c as f64 * t.rate)
        .sum();
    let want_more = base / n < alpha;
    let mut best: Option<(usize, State, f64)> = None;
    for (t, q) in tables.iter().enumerate() {
        for x in 0..q.num_states() {
            let active = policies[t].policy[x] > 0.5;
            if active == want_more {
                continue;
            }
            let g = q.gamma(x).abs();
            if best.is_none_or(|(_, _, b)| g < b) {
                best = Some((t, x, g));
            }
        }
    }
    let Some((t, x, _)) = best else {
        return Ok(None);
    };
    let (arm, count) = &mix[t];
    let others = base - *count as f64 * policies[t].rate;
    let fraction_at = |beta: f64| -> Result<f64> {
        let mut policy = policies[t].policy.clone();
        policy[x] = beta;
        let pi = stationary_distribution(arm, &policy)?;
        Ok((others + *count as f64 * activation_rate(&policy, &pi)) / n)
    };
    let current = if want_more { 0.0 } else { 1.0 };
    let flipped = 1.0 - current;
    let f_flip = fraction_at(flipped)?;
    // The flip cannot reach alpha: report the full flip.
    if (f_flip - alpha) * (fraction_at(current)? - alpha) > 0.0 {
        return Ok(Some(Randomization {
            arm_label: arm.label().to_owned(),
            state: x,
            probability: flipped,
        }));
    }
    let (mut a, mut b) = (0.0_f64, 1.0_f64);
    let increasing = fraction_at(1.0)? >= fraction_at(0.0)?;
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        let f = fraction_at(mid)?;
        if (f < alpha) == increasing {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Some(Randomization {
        arm_label: arm.label().to_owned(),
        state: x,
        probability: 0.5 * (a + b),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::stationary::policy_gain;
    use crate::models::make_nonindexable_arm;

    fn symmetric() -> Arc<ArmModel> {
        let k = vec![0.2, 0.8, 0.4, 0.6];
        let r = vec![1.0, 3.0];
        Arc::new(ArmModel::new(k.clone(), k, r.clone(), r, "sym").unwrap())
    }

    #[test]
    fn golden_section_finds_kink() {
        let x = golden_section(-5.0, 5.0, 1e-9, |x| Ok((x - 1.25).abs())).unwrap();
        assert!((x - 1.25).abs() < 1e-8);
    }

    #[test]
    fn minimiser_outside_bracket_is_found_by_widening() {
        let x = minimise_convex((0.0, 1.0), 1e-8, |x| Ok((x - 2.5).abs())).unwrap();
        assert!((x - 2.5).abs() < 1e-6);
    }

    #[test]
    fn symmetric_arm_dual_at_zero_is_mean_reward() {
        let arm = symmetric();
        let pi = stationary_distribution(&arm, &[0.0, 0.0]).unwrap();
        let mean = policy_gain(&arm, &[0.0, 0.0], &pi, 0.0);
        let v = dual_value(&[(arm, 1)], 0.0, 0.5, RviOptions::default()).unwrap();
        assert!((v - mean).abs() < 1e-8);
    }

    #[test]
    fn symmetric_arm_dual_is_v_shaped() {
        let arm = symmetric();
        let mix = [(arm, 1)];
        for l in [-2.0, -0.5, 0.5, 2.0] {
            let v = dual_value(&mix, l, 0.5, RviOptions::default()).unwrap();
            let v0 = dual_value(&mix, 0.0, 0.5, RviOptions::default()).unwrap();
            assert!((v - v0 - 0.5 * l.abs()).abs() < 1e-8);
        }
    }

    #[test]
    fn slack_constraint_gives_zero_multiplier() {
        // Active strictly better everywhere at lambda = 0.
        let k = vec![0.5, 0.5, 0.5, 0.5];
        let arm = Arc::new(ArmModel::new(k.clone(), k, vec![0.0; 2], vec![1.0; 2], "a").unwrap());
        let sol = optimal_lambda(&[(arm, 3)], 1.0, DualOptions::default()).unwrap();
        assert_eq!(sol.lambda_star, 0.0);
        assert!((sol.activation_fraction - 1.0).abs() < 1e-12);
        assert!(sol.randomization.is_none());
    }

    #[test]
    fn nonindexable_randomization_restores_alpha() {
        let arm = Arc::new(make_nonindexable_arm());
        let sol = optimal_lambda(&[(Arc::clone(&arm), 10)], 0.3, DualOptions::default()).unwrap();
        assert!((0.0..=1.0).contains(&sol.activation_fraction));
        if let Some(r) = &sol.randomization {
            let q = crate::exact::rvi::rvi_q(&arm, sol.lambda_star, RviOptions::default()).unwrap();
            let mut policy = q.greedy_policy(TIE_TOL);
            policy[r.state] = r.probability;
            let pi = stationary_distribution(&arm, &policy).unwrap();
            assert!((activation_rate(&policy, &pi) - 0.3).abs() < 1e-9);
        } else {
            assert!((sol.activation_fraction - 0.3).abs() < 1e-9);
        }
    }
}
