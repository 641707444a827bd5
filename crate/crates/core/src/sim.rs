//! Finite-`N` simulation of top-`M` index policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{step, Action, BanditInstance, State};
use crate::error::{Error, Result};
use crate::exact::IndexTable;
use crate::stats::{batch_means, MovingAverage, TRACE_WINDOW};

/// Reusable top-`M` selector; ties are broken by fresh random keys.
#[derive(Clone, Debug, Default)]
pub struct TopM {
    order: Vec<(f64, u32, usize)>,
}

impl TopM {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes exactly `m` trues into `out`, ranking `scores` descending.
    pub fn select<R: Rng + ?Sized>(
        &mut self,
        scores: &[f64],
        m: usize,
        rng: &mut R,
        out: &mut [bool],
    ) {
        let n = scores.len();
        assert!(m <= n && out.len() == n, "top-M selection needs m <= n");
        self.order.clear();
        self.order.extend(
            scores
                .iter()
                .enumerate()
                .map(|(i, &s)| (s, rng.random::<u32>(), i)),
        );
        out.fill(false);
        if m == 0 {
            return;
        }
        let cmp =
            |a: &(f64, u32, usize), b: &(f64, u32, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if m < n {
            self.order.select_nth_unstable_by(m - 1, cmp);
        }
        for &(_, _, i) in &self.order[..m] {
            out[i] = true;
        }
    }
}

/// One-shot convenience wrapper around [`TopM`].
pub fn top_m_select<R: Rng + ?Sized>(scores: &[f64], m: usize, rng: &mut R) -> Vec<bool> {
    let mut out = vec![false; scores.len()];
    TopM::new().select(scores, m, rng, &mut out);
    out
}

/// Uniformly random set of exactly `m` arms.
pub fn random_m_select<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R, out: &mut [bool]) {
    out.fill(false);
    for i in rand::seq::index::sample(rng, n, m) {
        out[i] = true;
    }
}

/// Activation rule of a simulation. Index tables are given per arm type.
#[derive(Clone, Debug)]
pub enum SimPolicy {
    Lip(Vec<IndexTable>),
    Wip(Vec<IndexTable>),
    Random,
}

impl SimPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            SimPolicy::Lip(_) => "LIP",
            SimPolicy::Wip(_) => "WIP",
            SimPolicy::Random => "RANDOM",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: u64,
    pub seed: u64,
    /// Trace rows are kept every `trace_every` steps.
    pub trace_every: u64,
    /// Number of batches for the batch-means standard error.
    pub batches: usize,
}

impl SimConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        SimConfig {
            horizon,
            seed,
            trace_every: (horizon / 1000).max(1),
            batches: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTraceRow {
    pub n: u64,
    pub moving_avg_reward: f64,
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub policy: String,
    pub horizon: u64,
    pub seed: u64,
    /// Time-averaged total reward over all arms.
    pub average_reward: f64,
    /// Batch-means standard error of `average_reward`.
    pub stderr: f64,
    pub trace: Vec<SimTraceRow>,
    /// Steps whose number of active arms differed from `M`.
    pub budget_violations: u64,
    pub activation_frequency: Vec<f64>,
}

fn check_tables(instance: &BanditInstance, tables: &[IndexTable]) -> Result<()> {
    if tables.len() != instance.types().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} index tables for {} arm types",
            tables.len(),
            instance.types().len()
        )));
    }
    for (t, table) in instance.types().iter().zip(tables) {
        if table.len() != t.model.num_states() {
            return Err(Error::ShapeMismatch(format!(
                "index table for '{}' has {} entries, arm has {} states",
                t.model.label(),
                table.len(),
                t.model.num_states()
            )));
        }
    }
    Ok(())
}

/// Runs the `N`-arm system for `horizon` steps from every arm in state 0.
/// Rewards are the true rewards, without multiplier terms.
pub fn simulate(
    instance: &BanditInstance,
    policy: &SimPolicy,
    config: &SimConfig,
) -> Result<SimStats> {
    simulate_from(instance, policy, config, &vec![0; instance.num_arms()])
}

pub fn simulate_from(
    instance: &BanditInstance,
    policy: &SimPolicy,
    config: &SimConfig,
    initial: &[State],
) -> Result<SimStats> {
    let n = instance.num_arms();
    let m = instance.budget();
    if initial.len() != n {
        return Err(Error::ShapeMismatch(
            "one initial state per arm required".into(),
        ));
    }
    for (i, &x) in initial.iter().enumerate() {
        instance.arm(i).check_state(x)?;
    }
    for t in instance.types() {
        t.model.ensure_valid()?;
    }
    let tables = match policy {
        SimPolicy::Lip(t) | SimPolicy::Wip(t) => {
            check_tables(instance, t)?;
            Some(t)
        }
        SimPolicy::Random => None,
    };
    if config.trace_every == 0 {
        return Err(Error::InputDomain("trace_every must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut states = initial.to_vec();
    let mut active = vec![false; n];
    let mut scores = vec![0.0; n];
    let mut selector = TopM::new();
    let mut counts = vec![0u64; n];
    let mut rewards = Vec::with_capacity(config.horizon as usize);
    let mut ma = MovingAverage::new(TRACE_WINDOW);
    let mut trace = Vec::new();
    let mut violations = 0u64;
    for step_n in 1..=config.horizon {
        match tables {
            Some(tables) => {
                for i in 0..n {
                    scores[i] = tables[instance.type_of(i)].get(states[i]);
                }
                selector.select(&scores, m, &mut rng, &mut active);
            }
            None => random_m_select(n, m, &mut rng, &mut active),
        }
        let mut reward = 0.0;
        let mut used = 0usize;
        for i in 0..n {
            let u = Action::from_bool(active[i]);
            let arm = instance.arm(i);
            reward += arm.reward(states[i], u);
            if active[i] {
                used += 1;
                counts[i] += 1;
            }
            states[i] = step(arm, states[i], u, &mut rng);
        }
        if used != m {
            violations += 1;
        }
        rewards.push(reward);
        let avg = ma.push(reward);
        if step_n % config.trace_every == 0 {
            trace.push(SimTraceRow {
                n: step_n,
                moving_avg_reward: avg,
                budget: used,
            });
        }
    }
    let (average_reward, stderr) = batch_means(&rewards, config.batches);
    if config.horizon > 0 && !average_reward.is_finite() {
        return Err(Error::NonFinite("average reward".into()));
    }
    let h = config.horizon.max(1) as f64;
    Ok(SimStats {
        policy: policy.name().to_owned(),
        horizon: config.horizon,
        seed: config.seed,
        average_reward,
        stderr,
        trace,
        budget_violations: violations,
        activation_frequency: counts.iter().map(|&c| c as f64 / h).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::ArmModel;
    use crate::exact::IndexSource;

    #[test]
    fn distinct_scores_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sel = top_m_select(&[0.3, 2.0, -1.0, 1.0], 2, &mut rng);
        assert_eq!(sel, vec![false, true, false, true]);
        let sel = top_m_select(&[0.3, 2.0, -1.0, 1.0], 3, &mut rng);
        assert_eq!(sel, vec![true, true, false, true]);
    }

    #[test]
    fn equal_scores_share_activations_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (n, m, draws) = (5, 2, 100_000);
        let mut hits = vec![0u32; n];
        let mut sel = TopM::new();
        let mut out = vec![false; n];
        for _ in 0..draws {
            sel.select(&[1.0; 5], m, &mut rng, &mut out);
            assert_eq!(out.iter().filter(|&&a| a).count(), m);
            for (h, &a) in hits.iter_mut().zip(&out) {
                *h += a as u32;
            }
        }
        for h in hits {
            assert!((h as f64 / draws as f64 - 0.4).abs() < 0.01);
        }
    }

    fn sym_instance() -> BanditInstance {
        let k = vec![0.6, 0.4, 0.3, 0.7];
        let r = vec![1.0, -0.5];
        let arm = ArmModel::new(k.clone(), k, r.clone(), r, "sym").unwrap();
        BanditInstance::homogeneous(arm, 4, 2).unwrap()
    }

    #[test]
    fn random_matches_index_policy_on_symmetric_arms() {
        let inst = sym_instance();
        let cfg = SimConfig::new(200_000, 3);
        let table = IndexTable::new(vec![0.5, 0.5], IndexSource::External, "sym").unwrap();
        let a = simulate(&inst, &SimPolicy::Random, &cfg).unwrap();
        let b = simulate(&inst, &SimPolicy::Lip(vec![table]), &cfg).unwrap();
        let tol = 2.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.average_reward - b.average_reward).abs() <= tol.max(1e-3));
        assert_eq!(a.budget_violations + b.budget_violations, 0);
    }

    #[test]
    fn replay_is_bit_identical() {
        let inst = sym_instance();
        let cfg = SimConfig::new(10_000, 11);
        let a = simulate(&inst, &SimPolicy::Random, &cfg).unwrap();
        let b = simulate(&inst, &SimPolicy::Random, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_shape_is_checked() {
        let inst = sym_instance();
        let table = IndexTable::new(vec![0.5], IndexSource::External, "sym").unwrap();
        assert!(simulate(&inst, &SimPolicy::Lip(vec![table]), &SimConfig::new(10, 0)).is_err());
    }
}
