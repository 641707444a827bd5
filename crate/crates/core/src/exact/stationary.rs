//! Stationary analysis of the chain induced by a (randomized) stationary policy.

use nalgebra::{DMatrix, DVector};

use crate::arm::{Action, ArmModel};
use crate::error::{Error, Result};

/// Residual bound enforced on `‖πP − π‖∞`.
pub const STATIONARY_RESIDUAL: f64 = 1e-12;

/// Transition matrix `P^φ` for per-state activation probabilities `policy`.
pub fn induced_kernel(arm: &ArmModel, policy: &[f64]) -> Result<DMatrix<f64>> {
    let n = arm.num_states();
    if policy.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "policy has {} entries for {n} states",
            policy.len()
        )));
    }
    if let Some(p) = policy.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InputDomain(format!(
            "activation probability {p} outside [0,1]"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |x, y| {
        let a = policy[x];
        (1.0 - a) * arm.prob(x, Action::Passive, y) + a * arm.prob(x, Action::Active, y)
    }))
}

/// Solves `π = πP^φ`, `Σπ = 1` by a direct LU solve.
pub fn stationary_distribution(arm: &ArmModel, policy: &[f64]) -> Result<Vec<f64>> {
    let p = induced_kernel(arm, policy)?;
    let n = p.nrows();
    // (P^T - I) π = 0 with the last equation replaced by normalisation.
    let mut a = p.transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b).ok_or_else(|| {
        Error::Singular(format!("arm '{}': singular stationary system", arm.label()))
    })?;
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!(
            "arm '{}': non-finite solution",
            arm.label()
        )));
    }
    let residual = (pi.transpose() * &p - pi.transpose()).amax();
    if residual >= STATIONARY_RESIDUAL {
        return Err(Error::Singular(format!(
            "arm '{}': stationary residual {residual:e} (reducible chain?)",
            arm.label()
        )));
    }
    Ok(pi.iter().copied().collect())
}

/// Long-run average of `r(x,u) + λu` under `policy` with stationary law `pi`.
pub fn policy_gain(arm: &ArmModel, policy: &[f64], pi: &[f64], lambda: f64) -> f64 {
    (0..arm.num_states())
        .map(|x| {
            let a = policy[x];
            let r = (1.0 - a) * arm.reward(x, Action::Passive)
                + a * (arm.reward(x, Action::Active) + lambda);
            pi[x] * r
        })
        .sum()
}

/// Long-run fraction of active steps under `policy`.
pub fn activation_rate(policy: &[f64], pi: &[f64]) -> f64 {
    policy.iter().zip(pi).map(|(a, p)| a * p).sum()
}
