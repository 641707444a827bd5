//! Two-timescale tabular learners of the Lagrangian index.
//!
//! Q-values follow RVI Q-learning at the current multiplier on the fast
//! scale; the multiplier follows a stochastic subgradient of the dual on the
//! slow scale. [`Algorithm::Relaxed`] lets every arm act ε-greedily;
//! [`Algorithm::HardBudget`] executes exactly `M` activations per step and
//! drives the multiplier with separate virtual actions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{step, subsidized, Action, ArmModel, BanditInstance, State};
use crate::error::{Error, Result};
use crate::exact::{IndexSource, IndexTable};
use crate::schedule::{Exploration, StepSchedules};
use crate::sim::{random_m_select, TopM};
use crate::stats::{MovingAverage, TRACE_WINDOW};

/// Q-table with a running sum so the normalizer costs O(1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnedTable {
    pub label: String,
    pub values: Vec<[f64; 2]>,
    pub visits: Vec<[u64; 2]>,
    sum: f64,
}

impl LearnedTable {
    pub fn zeros(num_states: usize, label: impl Into<String>) -> Self {
        LearnedTable {
            label: label.into(),
            values: vec![[0.0; 2]; num_states],
            visits: vec![[0; 2]; num_states],
            sum: 0.0,
        }
    }

    /// `(1/(2|X|)) Σ_x (Q(x,0) + Q(x,1))`.
    pub fn f(&self) -> f64 {
        self.sum / (2 * self.values.len()) as f64
    }

    pub fn gamma(&self, x: State) -> f64 {
        self.values[x][1] - self.values[x][0]
    }

    pub fn index_table(&self) -> Result<IndexTable> {
        let v = (0..self.values.len()).map(|x| self.gamma(x)).collect();
        IndexTable::new(v, IndexSource::External, self.label.clone())
    }

    fn resum(&mut self) {
        self.sum = self.values.iter().map(|q| q[0] + q[1]).sum();
    }
}

/// `Q(x,u) += α·(r(x,u) + λu + max_v Q(y,v) − f(Q) − Q(x,u))`; returns the new entry.
pub fn q_step(
    arm: &ArmModel,
    table: &mut LearnedTable,
    x: State,
    u: Action,
    y: State,
    lambda: f64,
    alpha: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InputDomain(format!(
            "step size {alpha} outside [0, 1]"
        )));
    }
    arm.check_state(x)?;
    arm.check_state(y)?;
    if table.values.len() != arm.num_states() {
        return Err(Error::ShapeMismatch("table and arm sizes differ".into()));
    }
    Ok(q_step_unchecked(arm, table, x, u, y, lambda, alpha))
}

#[inline]
fn q_step_unchecked(
    arm: &ArmModel,
    table: &mut LearnedTable,
    x: State,
    u: Action,
    y: State,
    lambda: f64,
    alpha: f64,
) -> f64 {
    let next = table.values[y][0].max(table.values[y][1]);
    let old = table.values[x][u.index()];
    let delta = alpha * (subsidized(arm, x, u, lambda) + next - table.f() - old);
    table.values[x][u.index()] = old + delta;
    table.sum += delta;
    old + delta
}

/// `λ − β·(active − M)`.
pub fn dual_step(lambda: f64, beta: f64, active: usize, budget: usize) -> f64 {
    lambda - beta * (active as f64 - budget as f64)
}

/// With probability `1−ε` the greedy action (ties uniform), else uniform.
pub fn eps_greedy<R: Rng + ?Sized>(q: [f64; 2], epsilon: f64, rng: &mut R) -> Action {
    if rng.random::<f64>() < epsilon || q[0] == q[1] {
        Action::from_bool(rng.random::<bool>())
    } else {
        Action::from_bool(q[1] > q[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Per-arm ε-greedy actions, budget met only on average.
    Relaxed,
    /// Exactly `M` executed activations, virtual actions for the multiplier.
    HardBudget,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub steps: u64,
    pub seed: u64,
    pub schedules: StepSchedules,
    pub exploration: Exploration,
    pub initial_lambda: f64,
    /// Arms with the same label share one table and one visit counter.
    pub share_tables: bool,
    /// Trace rows are kept every `trace_every` steps.
    pub trace_every: u64,
}

impl LearnerConfig {
    pub fn new(steps: u64, seed: u64) -> Self {
        LearnerConfig {
            steps,
            seed,
            schedules: StepSchedules::default_pair(),
            exploration: Exploration::tabular(1.0),
            initial_lambda: 0.0,
            share_tables: true,
            trace_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub tables: Vec<LearnedTable>,
    pub lambda: f64,
    pub epsilon: f64,
    pub step: u64,
    pub arm_states: Vec<State>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub n: u64,
    pub lambda: f64,
    /// Moving average of the total true reward per step.
    pub avg_reward: f64,
    pub epsilon: f64,
    /// Executed activations at this step.
    pub active: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub algorithm: Algorithm,
    pub state: LearnerState,
    pub trace: Vec<TraceRow>,
    /// Table used by each arm.
    pub table_of_arm: Vec<usize>,
    /// Steps whose executed activations differed from `M`.
    pub budget_violations: u64,
    /// Mean total true reward over the run.
    pub average_reward: f64,
}

impl LearnResult {
    pub fn final_lambda(&self) -> f64 {
        self.state.lambda
    }

    /// Current index estimates per table.
    pub fn index_tables(&self) -> Result<Vec<IndexTable>> {
        self.state
            .tables
            .iter()
            .map(LearnedTable::index_table)
            .collect()
    }
}

pub fn run_alg1(instance: &BanditInstance, config: &LearnerConfig) -> Result<LearnResult> {
    run_learner(instance, config, Algorithm::Relaxed)
}

pub fn run_alg2(instance: &BanditInstance, config: &LearnerConfig) -> Result<LearnResult> {
    run_learner(instance, config, Algorithm::HardBudget)
}

pub fn run_learner(
    instance: &BanditInstance,
    config: &LearnerConfig,
    algorithm: Algorithm,
) -> Result<LearnResult> {
    config.exploration.check()?;
    if config.trace_every == 0 {
        return Err(Error::Config("trace_every must be positive".into()));
    }
    for t in instance.types() {
        t.model.ensure_valid()?;
    }
    let n = instance.num_arms();
    let m = instance.budget();
    let (mut tables, table_of_arm): (Vec<LearnedTable>, Vec<usize>) = if config.share_tables {
        let tables = instance
            .types()
            .iter()
            .map(|t| LearnedTable::zeros(t.model.num_states(), t.model.label()))
            .collect();
        (tables, (0..n).map(|i| instance.type_of(i)).collect())
    } else {
        let tables = (0..n)
            .map(|i| {
                LearnedTable::zeros(
                    instance.arm(i).num_states(),
                    format!("{}#{i}", instance.arm(i).label()),
                )
            })
            .collect();
        (tables, (0..n).collect())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut states: Vec<State> = (0..n)
        .map(|i| rng.random_range(0..instance.arm(i).num_states()))
        .collect();
    let mut lambda = config.initial_lambda;
    let mut epsilon = config.exploration.initial;
    let mut actions = vec![false; n];
    let mut scores = vec![0.0; n];
    let mut selector = TopM::new();
    let mut ma = MovingAverage::new(TRACE_WINDOW);
    let mut trace = Vec::with_capacity((config.steps / config.trace_every) as usize);
    let mut violations = 0u64;
    let mut reward_total = 0.0;

    for step_n in 1..=config.steps {
        // Executed actions, plus the activation count driving the multiplier.
        let dual_count = match algorithm {
            Algorithm::Relaxed => {
                for i in 0..n {
                    let q = tables[table_of_arm[i]].values[states[i]];
                    actions[i] = eps_greedy(q, epsilon, &mut rng).is_active();
                }
                actions.iter().filter(|&&a| a).count()
            }
            Algorithm::HardBudget => {
                if rng.random::<f64>() < epsilon {
                    random_m_select(n, m, &mut rng, &mut actions);
                } else {
                    for i in 0..n {
                        scores[i] = tables[table_of_arm[i]].gamma(states[i]);
                    }
                    selector.select(&scores, m, &mut rng, &mut actions);
                }
                (0..n)
                    .filter(|&i| {
                        let q = tables[table_of_arm[i]].values[states[i]];
                        eps_greedy(q, epsilon, &mut rng).is_active()
                    })
                    .count()
            }
        };
        let executed = actions.iter().filter(|&&a| a).count();
        if algorithm == Algorithm::HardBudget && executed != m {
            violations += 1;
        }
        let mut reward = 0.0;
        for i in 0..n {
            let arm = instance.arm(i);
            let u = Action::from_bool(actions[i]);
            let x = states[i];
            let y = step(arm, x, u, &mut rng);
            reward += arm.reward(x, u);
            let table = &mut tables[table_of_arm[i]];
            table.visits[x][u.index()] += 1;
            let alpha = config.schedules.alpha.at(table.visits[x][u.index()]);
            q_step_unchecked(arm, table, x, u, y, lambda, alpha);
            states[i] = y;
        }
        lambda = dual_step(lambda, config.schedules.beta.at(step_n), dual_count, m);
        if !lambda.is_finite() {
            return Err(Error::NonFinite(format!(
                "multiplier diverged at step {step_n}"
            )));
        }
        epsilon = config.exploration.next(epsilon);
        reward_total += reward;
        let avg = ma.push(reward);
        if step_n % 4096 == 0 {
            tables.iter_mut().for_each(LearnedTable::resum);
        }
        if step_n % config.trace_every == 0 {
            trace.push(TraceRow {
                n: step_n,
                lambda,
                avg_reward: avg,
                epsilon,
                active: executed,
            });
        }
    }
    tables.iter_mut().for_each(LearnedTable::resum);
    if tables
        .iter()
        .any(|t| t.values.iter().flatten().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("Q-table entry".into()));
    }
    Ok(LearnResult {
        algorithm,
        state: LearnerState {
            tables,
            lambda,
            epsilon,
            step: config.steps,
            arm_states: states,
        },
        trace,
        table_of_arm,
        budget_violations: violations,
        average_reward: if config.steps > 0 {
            reward_total / config.steps as f64
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::make_nonindexable_arm;
    use crate::schedule::Schedule;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn single_state_update() {
        let arm = ArmModel::new(vec![1.0], vec![1.0], vec![0.0], vec![1.0], "one").unwrap();
        let mut t = LearnedTable::zeros(1, "one");
        let v = q_step(&arm, &mut t, 0, Action::Active, 0, 0.0, 1.0).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(t.values[0], [0.0, 1.0]);
        let before = t.clone();
        q_step(&arm, &mut t, 0, Action::Passive, 0, 0.0, 0.0).unwrap();
        assert_eq!(t, before);
        assert!(q_step(&arm, &mut t, 0, Action::Passive, 0, 0.0, 1.5).is_err());
    }

    #[test]
    fn dual_step_examples() {
        assert!((dual_step(0.0, 0.1, 5, 3) + 0.2).abs() < 1e-15);
        assert_eq!(dual_step(1.7, 0.3, 3, 3), 1.7);
    }

    #[test]
    fn greedy_and_uniform_choices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..1000).all(|_| eps_greedy([0.0, 1.0], 0.0, &mut rng).is_active()));
        for q in [[0.0, 1.0], [0.3, 0.3]] {
            let eps = if q[0] == q[1] { 0.0 } else { 1.0 };
            let hits = (0..100_000)
                .filter(|_| eps_greedy(q, eps, &mut rng).is_active())
                .count();
            assert!((hits as f64 / 1e5 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn zero_steps_return_initial_state() {
        let inst = BanditInstance::homogeneous(make_nonindexable_arm(), 4, 1).unwrap();
        let mut cfg = LearnerConfig::new(0, 1);
        cfg.initial_lambda = 0.25;
        let r = run_alg1(&inst, &cfg).unwrap();
        assert_eq!(r.final_lambda(), 0.25);
        assert!(r.trace.is_empty());
        assert!(r.state.tables[0].values.iter().all(|q| *q == [0.0, 0.0]));
    }

    #[test]
    fn hard_budget_is_exact() {
        let inst = BanditInstance::homogeneous(make_nonindexable_arm(), 6, 2).unwrap();
        let r = run_alg2(&inst, &LearnerConfig::new(20_000, 9)).unwrap();
        assert_eq!(r.budget_violations, 0);
        assert!(r.trace.iter().all(|row| row.active == 2));
    }

    #[test]
    fn frozen_multiplier_stays() {
        let inst = BanditInstance::homogeneous(make_nonindexable_arm(), 4, 1).unwrap();
        let mut cfg = LearnerConfig::new(500, 2);
        cfg.schedules.beta = Schedule::Constant { value: 0.0 };
        cfg.initial_lambda = -0.3;
        assert_eq!(run_alg1(&inst, &cfg).unwrap().final_lambda(), -0.3);
    }

    #[test]
    fn running_sum_matches_table() {
        let inst = BanditInstance::homogeneous(make_nonindexable_arm(), 3, 1).unwrap();
        let r = run_alg1(&inst, &LearnerConfig::new(3000, 4)).unwrap();
        let t = &r.state.tables[0];
        let direct = crate::exact::f_norm(&t.values);
        assert!((t.f() - direct).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn q_step_touches_one_entry(x in 0usize..3, u in 0usize..2, y in 0usize..3,
                                    l in -2.0f64..2.0, a in 0.0f64..=1.0, seed in 0u64..1000) {
            let arm = make_nonindexable_arm();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = LearnedTable::zeros(3, "n");
            for q in t.values.iter_mut() {
                *q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            }
            t.resum();
            let before = t.values.clone();
            q_step(&arm, &mut t, x, Action::try_from(u).unwrap(), y, l, a).unwrap();
            for s in 0..3 {
                for v in 0..2 {
                    if (s, v) != (x, u) {
                        prop_assert_eq!(t.values[s][v], before[s][v]);
                    }
                }
            }
        }
    }
}
