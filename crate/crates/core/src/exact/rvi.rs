//! Relative value iteration on state-action values at a fixed multiplier.

use serde::{Deserialize, Serialize};

use crate::arm::{subsidized, Action, ArmModel, State};
use crate::error::{Error, Result};

/// Options for [`rvi_q`].
#[derive(Clone, Copy, Debug)]
pub struct RviOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation weight of each synchronous sweep. `1.0` is the plain
    /// iteration; values below one damp the periodic modes of nearly
    /// deterministic chains without moving the fixed point.
    pub relaxation: f64,
}

impl Default for RviOptions {
    fn default() -> Self {
        RviOptions {
            tol: 1e-10,
            max_iter: 1_000_000,
            relaxation: 0.5,
        }
    }
}

impl RviOptions {
    pub fn with_tol(tol: f64) -> Self {
        RviOptions {
            tol,
            ..Self::default()
        }
    }
}

/// Relative state-action values at a fixed multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    /// `values[x] = [Q(x,0), Q(x,1)]`.
    pub values: Vec<[f64; 2]>,
    pub lambda: f64,
    /// Average reward of the greedy policy; equals `f_norm(values)` at the fixed point.
    pub gain: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl QTable {
    pub fn num_states(&self) -> usize {
        self.values.len()
    }

    pub fn q(&self, x: State, u: Action) -> f64 {
        self.values[x][u.index()]
    }

    pub fn gamma(&self, x: State) -> f64 {
        self.values[x][1] - self.values[x][0]
    }

    /// Greedy activation per state; ties within `tie_tol` are passive.
    pub fn greedy_policy(&self, tie_tol: f64) -> Vec<f64> {
        (0..self.num_states())
            .map(|x| if self.gamma(x) > tie_tol { 1.0 } else { 0.0 })
            .collect()
    }
}

/// `(1/(2|X|)) Σ_x (Q(x,0) + Q(x,1))`.
pub fn f_norm(values: &[[f64; 2]]) -> f64 {
    assert!(!values.is_empty(), "f_norm of an empty table");
    let sum: f64 = values.iter().map(|q| q[0] + q[1]).sum();
    sum / (2 * values.len()) as f64
}

/// Solves `Q(x,u) = r(x,u) + λu − f(Q) + Σ_y p(y|x,u) max_v Q(y,v)` by
/// synchronous sweeps until the sup-norm change drops below `opts.tol`.
///
/// At the fixed point `f(Q)` is the optimal gain.
pub fn rvi_q(arm: &ArmModel, lambda: f64, opts: RviOptions) -> Result<QTable> {
    rvi_q_warm(arm, lambda, opts, None)
}

/// [`rvi_q`] started from a previous table (same arm).
pub fn rvi_q_warm(
    arm: &ArmModel,
    lambda: f64,
    opts: RviOptions,
    init: Option<&QTable>,
) -> Result<QTable> {
    arm.ensure_valid()?;
    if !(opts.tol > 0.0) || !lambda.is_finite() {
        return Err(Error::InputDomain(format!(
            "rvi_q needs tol > 0 and finite lambda (tol={}, lambda={lambda})",
            opts.tol
        )));
    }
    let n = arm.num_states();
    let mut q = match init {
        Some(t) if t.values.len() == n => t.values.clone(),
        _ => vec![[0.0; 2]; n],
    };
    let rows = [
        arm.sparse_rows(Action::Passive),
        arm.sparse_rows(Action::Active),
    ];
    let reward: Vec<[f64; 2]> = (0..n)
        .map(|x| {
            [
                subsidized(arm, x, Action::Passive, lambda),
                subsidized(arm, x, Action::Active, lambda),
            ]
        })
        .collect();
    let tau = opts.relaxation;
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        for (vx, qx) in v.iter_mut().zip(&q) {
            *vx = qx[0].max(qx[1]);
        }
        let f = f_norm(&q);
        residual = 0.0;
        for x in 0..n {
            for u in 0..2 {
                let target = reward[x][u] - f + rows[u][x].expect(&v);
                let next = q[x][u] + tau * (target - q[x][u]);
                residual = f64::max(residual, (next - q[x][u]).abs());
                q[x][u] = next;
            }
        }
        if !residual.is_finite() {
            break;
        }
        if residual < opts.tol {
            return Ok(QTable {
                gain: f_norm(&q),
                values: q,
                lambda,
                residual,
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::stationary::{policy_gain, stationary_distribution};
    use crate::models::make_nonindexable_arm;

    #[test]
    fn single_state_prefers_active() {
        let arm = ArmModel::new(vec![1.0], vec![1.0], vec![0.0], vec![1.0], "one").unwrap();
        let q = rvi_q(&arm, 0.0, RviOptions::default()).unwrap();
        assert!((q.gain - 1.0).abs() < 1e-9);
        assert!((q.gamma(0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn action_symmetric_arm_gap_is_lambda() {
        let k = vec![0.2, 0.8, 0.6, 0.4];
        let r = vec![1.0, -0.5];
        let arm = ArmModel::new(k.clone(), k, r.clone(), r, "sym").unwrap();
        let q = rvi_q(&arm, -2.0, RviOptions::default()).unwrap();
        for x in 0..2 {
            assert!((q.gamma(x) + 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn fixed_point_satisfies_normalised_bellman_equation() {
        let arm = make_nonindexable_arm();
        let q = rvi_q(&arm, 0.1, RviOptions::default()).unwrap();
        let v: Vec<f64> = q.values.iter().map(|r| r[0].max(r[1])).collect();
        let f = f_norm(&q.values);
        assert!((f - q.gain).abs() < 1e-12);
        for x in 0..3 {
            for u in Action::BOTH {
                let rhs = subsidized(&arm, x, u, 0.1) - f
                    + (0..3).map(|y| arm.prob(x, u, y) * v[y]).sum::<f64>();
                assert!((q.q(x, u) - rhs).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gain_matches_policy_evaluation_oracle() {
        let arm = make_nonindexable_arm();
        let q = rvi_q(&arm, 0.0, RviOptions::default()).unwrap();
        let policy = q.greedy_policy(1e-9);
        let pi = stationary_distribution(&arm, &policy).unwrap();
        let oracle = policy_gain(&arm, &policy, &pi, 0.0);
        assert!((q.gain - oracle).abs() < 1e-8, "{} vs {oracle}", q.gain);
    }

    #[test]
    fn warm_start_reaches_same_table() {
        let arm = make_nonindexable_arm();
        let cold = rvi_q(&arm, 0.2, RviOptions::default()).unwrap();
        let warm = rvi_q_warm(&arm, 0.25, RviOptions::default(), Some(&cold)).unwrap();
        let again = rvi_q(&arm, 0.25, RviOptions::default()).unwrap();
        for x in 0..3 {
            for u in 0..2 {
                assert!((warm.values[x][u] - again.values[x][u]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let arm = make_nonindexable_arm();
        let opts = RviOptions {
            max_iter: 2,
            ..RviOptions::default()
        };
        match rvi_q(&arm, 0.0, opts) {
            Err(Error::NonConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn f_norm_examples() {
        assert_eq!(f_norm(&[[3.0, 3.0], [3.0, 3.0]]), 3.0);
        assert_eq!(f_norm(&[[1.0, 2.0], [3.0, 4.0]]), 2.5);
    }
}
