//! Brute-force optimum of the hard-budget problem on the product chain.
//!
//! Only usable at desk scale: the joint state space has `Π|X_i|` states and
//! each step chooses one of the `C(N, M)` subsets of active arms.

use serde::Serialize;

use crate::arm::{Action, BanditInstance};
use crate::error::{Error, Result};

/// Refuse instances whose `Π|X_i| · 2^N` exceeds this.
pub const PRODUCT_SIZE_LIMIT: f64 = 1e7;

#[derive(Clone, Debug, Serialize)]
pub struct ProductSolution {
    pub gain: f64,
    /// Active arm sets, one per joint state (mixed radix, arm 0 least significant).
    pub policy: Vec<Vec<usize>>,
    pub iterations: usize,
}

fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < m - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, m, &mut Vec::new(), &mut out);
    out
}

/// Relative value iteration on the joint chain with exactly `M` active arms.
pub fn product_mdp_oracle(instance: &BanditInstance, tol: f64) -> Result<ProductSolution> {
    let arms = instance.arms();
    let n_arms = arms.len();
    let sizes: Vec<usize> = arms.iter().map(|a| a.num_states()).collect();
    let size = sizes.iter().map(|&s| s as f64).product::<f64>() * 2f64.powi(n_arms as i32);
    if size > PRODUCT_SIZE_LIMIT {
        return Err(Error::SizeGuard {
            size,
            limit: PRODUCT_SIZE_LIMIT,
        });
    }
    for a in arms {
        a.ensure_valid()?;
    }
    let joint: usize = sizes.iter().product();
    let actions = subsets(n_arms, instance.budget());

    let decode = |mut s: usize| -> Vec<usize> {
        sizes
            .iter()
            .map(|&k| {
                let x = s % k;
                s /= k;
                x
            })
            .collect()
    };
    let mut strides = vec![1usize; n_arms];
    for i in 1..n_arms {
        strides[i] = strides[i - 1] * sizes[i - 1];
    }

    // Pre-expand each (joint state, action set) into reward and sparse successor list.
    struct Choice {
        reward: f64,
        next: Vec<(usize, f64)>,
    }
    let mut table: Vec<Vec<Choice>> = Vec::with_capacity(joint);
    for s in 0..joint {
        let xs = decode(s);
        let mut choices = Vec::with_capacity(actions.len());
        for act in &actions {
            let mut active = vec![false; n_arms];
            for &i in act {
                active[i] = true;
            }
            let mut reward = 0.0;
            let mut next: Vec<(usize, f64)> = vec![(0, 1.0)];
            for i in 0..n_arms {
                let u = Action::from_bool(active[i]);
                reward += arms[i].reward(xs[i], u);
                let row = &arms[i].sparse_rows(u)[xs[i]];
                let mut grown = Vec::with_capacity(next.len() * row.cols.len());
                for &(base, p) in &next {
                    for (&y, &q) in row.cols.iter().zip(&row.probs) {
                        grown.push((base + y * strides[i], p * q));
                    }
                }
                next = grown;
            }
            choices.push(Choice { reward, next });
        }
        table.push(choices);
    }

    let mut v = vec![0.0; joint];
    let mut best = vec![0usize; joint];
    let tau = 0.5;
    for iter in 1..=1_000_000usize {
        let f = v.iter().sum::<f64>() / joint as f64;
        let mut residual: f64 = 0.0;
        let mut next_v = vec![0.0; joint];
        for s in 0..joint {
            let (arg, val) = table[s]
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    (
                        k,
                        c.reward + c.next.iter().map(|&(y, p)| p * v[y]).sum::<f64>(),
                    )
                })
                .fold((0, f64::NEG_INFINITY), |acc, cur| {
                    if cur.1 > acc.1 {
                        cur
                    } else {
                        acc
                    }
                });
            best[s] = arg;
            let updated = v[s] + tau * (val - f - v[s]);
            residual = residual.max((updated - v[s]).abs());
            next_v[s] = updated;
        }
        v = next_v;
        if residual < tol {
            return Ok(ProductSolution {
                gain: v.iter().sum::<f64>() / joint as f64,
                policy: best.iter().map(|&k| actions[k].clone()).collect(),
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: 1_000_000,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::ArmModel;
    use crate::exact::dual::dual_value;
    use crate::exact::rvi::RviOptions;
    use crate::exact::stationary::{policy_gain, stationary_distribution};
    use crate::models::make_nonindexable_arm;

    #[test]
    fn subset_enumeration() {
        assert_eq!(subsets(3, 1), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(subsets(4, 2).len(), 6);
    }

    #[test]
    fn identical_actions_give_twice_the_mean() {
        let k = vec![0.3, 0.7, 0.5, 0.5];
        let r = vec![2.0, -1.0];
        let arm = ArmModel::new(k.clone(), k, r.clone(), r, "sym").unwrap();
        let pi = stationary_distribution(&arm, &[0.0, 0.0]).unwrap();
        let mean = policy_gain(&arm, &[0.0, 0.0], &pi, 0.0);
        let inst = BanditInstance::homogeneous(arm, 2, 1).unwrap();
        let sol = product_mdp_oracle(&inst, 1e-11).unwrap();
        assert!((sol.gain - 2.0 * mean).abs() < 1e-8);
    }

    #[test]
    fn weak_duality_on_small_instance() {
        let inst = BanditInstance::homogeneous(make_nonindexable_arm(), 3, 1).unwrap();
        let sol = product_mdp_oracle(&inst, 1e-11).unwrap();
        assert!(sol.policy.iter().all(|a| a.len() == 1));
        for l in [-0.5, -0.1, 0.0, 0.1, 0.3, 0.8] {
            let d = dual_value(&inst.mix(), l, inst.alpha(), RviOptions::default()).unwrap();
            assert!(
                d >= sol.gain - 1e-8,
                "dual {d} < oracle {} at {l}",
                sol.gain
            );
        }
    }

    #[test]
    fn size_guard_refuses_large_instances() {
        let inst = BanditInstance::homogeneous(make_nonindexable_arm(), 12, 3).unwrap();
        assert!(matches!(
            product_mdp_oracle(&inst, 1e-9),
            Err(Error::SizeGuard { .. })
        ));
    }
}
