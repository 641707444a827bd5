//! Neural two-timescale learner of the Lagrangian index.
//!
//! A feed-forward approximator replaces the Q-table. Transitions are stored
//! in a replay buffer together with the multiplier in force, batches are fit
//! to relative-value targets computed with a periodically synchronized copy
//! of the approximator, and the multiplier follows the same slow subgradient
//! step as the tabular learners.

pub mod net;
pub mod replay;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use net::{Adam, Dense, Mlp};
pub use replay::{ReplayBuffer, Transition};

use crate::arm::{step, Action, BanditInstance, State};
use crate::error::{Error, Result};
use crate::exact::{IndexSource, IndexTable};
use crate::schedule::{Exploration, Schedule, StepSchedules};
use crate::stats::{MovingAverage, TRACE_WINDOW};
use crate::tabular::{dual_step, eps_greedy, TraceRow};

/// Largest number of states averaged by the normalizer per arm type.
pub const EVAL_GRID_LIMIT: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub learning_rate: f32,
    pub exploration: Exploration,
    /// Steps between copies of the main approximator into the target.
    pub sync_period: u64,
    /// Multiplier step size per global step.
    pub beta: Schedule,
    pub initial_lambda: f64,
    /// Trace rows are kept every `trace_every` steps.
    pub trace_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![512, 256, 128],
            batch_size: 32,
            replay_capacity: 1000,
            learning_rate: 1e-5,
            exploration: Exploration::dqn(1.0),
            sync_period: 200,
            beta: StepSchedules::default_pair().beta,
            initial_lambda: 0.0,
            trace_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        self.exploration.check()?;
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return bad("batch size must be in 1..=replay capacity");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.sync_period == 0 || self.trace_every == 0 {
            return bad("sync period and trace interval must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

/// Maps `(arm type, state)` to approximator inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    /// Number of states of each arm type.
    sizes: Vec<usize>,
    /// Evaluation grid of each type, as encoded inputs.
    grids: Vec<Array2<f32>>,
}

impl Encoding {
    /// The arm type is the first coordinate when there is more than one type.
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InputDomain(
                "every arm type needs at least one state".into(),
            ));
        }
        let mut enc = Encoding {
            sizes,
            grids: Vec::new(),
        };
        enc.grids = (0..enc.sizes.len())
            .map(|t| enc.batch(t, &evaluation_grid(enc.sizes[t], EVAL_GRID_LIMIT)))
            .collect();
        Ok(enc)
    }

    pub fn for_instance(instance: &BanditInstance) -> Result<Self> {
        Self::new(
            instance
                .types()
                .iter()
                .map(|t| t.model.num_states())
                .collect(),
        )
    }

    pub fn input_dim(&self) -> usize {
        if self.sizes.len() > 1 {
            2
        } else {
            1
        }
    }

    fn write(&self, arm_type: usize, x: State, row: &mut [f32]) {
        let scaled = x as f32 / self.sizes[arm_type] as f32;
        if self.sizes.len() > 1 {
            row[0] = arm_type as f32;
            row[1] = scaled;
        } else {
            row[0] = scaled;
        }
    }

    pub fn encode(&self, arm_type: usize, x: State) -> Vec<f32> {
        let mut row = vec![0.0; self.input_dim()];
        self.write(arm_type, x, &mut row);
        row
    }

    /// Inputs for several states of one type.
    pub fn batch(&self, arm_type: usize, states: &[State]) -> Array2<f32> {
        let mut out = Array2::zeros((states.len(), self.input_dim()));
        for (mut row, &x) in out.rows_mut().into_iter().zip(states) {
            self.write(arm_type, x, row.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn transitions(&self, batch: &[Transition], next: bool) -> Array2<f32> {
        let mut out = Array2::zeros((batch.len(), self.input_dim()));
        for (mut row, t) in out.rows_mut().into_iter().zip(batch) {
            let x = if next { t.next_state } else { t.state };
            self.write(t.arm_type, x, row.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

/// All states when `size ≤ limit`, else `limit` evenly spaced states.
pub fn evaluation_grid(size: usize, limit: usize) -> Vec<State> {
    if size <= limit {
        (0..size).collect()
    } else if limit == 1 {
        vec![0]
    } else {
        (0..limit)
            .map(|k| ((k as f64) * (size - 1) as f64 / (limit - 1) as f64).round() as State)
            .collect()
    }
}

/// Per-type normalizer: the mean of both main outputs over the type's grid.
pub fn f_estimates(main: &Mlp, encoding: &Encoding) -> Vec<f64> {
    encoding
        .grids
        .iter()
        .map(|g| {
            let out = main.forward(g.view());
            out.iter().map(|&v| v as f64).sum::<f64>() / out.len() as f64
        })
        .collect()
}

/// `r(s,a) + λa + max_v Q_target(s′,v) − f`.
pub fn q_target(t: &Transition, target_next: [f32; 2], f_estimate: f64) -> f64 {
    let bonus = if t.action.is_active() { t.lambda } else { 0.0 };
    t.reward + bonus + target_next[0].max(target_next[1]) as f64 - f_estimate
}

/// One optimizer step on the mean squared error between `Q(s,a)` and the
/// targets; returns the loss before the step.
pub fn train_batch(
    main: &mut Mlp,
    target: &Mlp,
    optimizer: &mut Adam,
    encoding: &Encoding,
    batch: &[Transition],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InputDomain("empty training batch".into()));
    }
    let f = f_estimates(main, encoding);
    let next = target.forward(encoding.transitions(batch, true).view());
    let (out, inputs) = main.forward_cached(encoding.transitions(batch, false).view());
    let scale = 2.0 / batch.len() as f64;
    let mut grad = Array2::<f32>::zeros(out.raw_dim());
    let mut loss = 0.0;
    for (k, t) in batch.iter().enumerate() {
        let y = q_target(t, [next[[k, 0]], next[[k, 1]]], f[t.arm_type]);
        let a = t.action.index();
        let err = out[[k, a]] as f64 - y;
        loss += err * err;
        grad[[k, a]] = (scale * err) as f32;
    }
    loss /= batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss {loss}")));
    }
    let grads = main.backward(&inputs, grad);
    optimizer.update(main, &grads);
    if !main.is_finite() {
        return Err(Error::NonFinite("approximator parameter".into()));
    }
    Ok(loss)
}

/// Sets the target parameters to the main parameters.
pub fn sync_target(main: &Mlp, target: &mut Mlp) -> Result<()> {
    target.copy_from(main)
}

/// `Q(x,1) − Q(x,0)` for every state of every arm type.
pub fn index_tables(main: &Mlp, encoding: &Encoding, labels: &[String]) -> Result<Vec<IndexTable>> {
    (0..encoding.sizes.len())
        .map(|t| {
            let states: Vec<State> = (0..encoding.sizes[t]).collect();
            let out = main.forward(encoding.batch(t, &states).view());
            let gamma = out
                .rows()
                .into_iter()
                .map(|r| (r[1] - r[0]) as f64)
                .collect();
            IndexTable::new(gamma, IndexSource::External, labels[t].clone())
        })
        .collect()
}

fn q_values(main: &Mlp, input: &[f32]) -> [f64; 2] {
    let view = ArrayView2::from_shape((1, input.len()), input).expect("one row");
    let out = main.forward(view);
    [out[[0, 0]] as f64, out[[0, 1]] as f64]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DqnResult {
    pub trace: Vec<TraceRow>,
    /// Mean training loss of each step that trained, as `(step, loss)`.
    pub losses: Vec<(u64, f64)>,
    pub final_lambda: f64,
    pub epsilon: f64,
    pub main: Mlp,
    /// Learned index over all states, one table per arm type.
    pub indices: Vec<IndexTable>,
    /// Mean total true reward over the run.
    pub average_reward: f64,
    pub batches_trained: u64,
}

/// Runs the neural learner for `steps` global steps.
pub fn run_dqn(
    instance: &BanditInstance,
    config: &TrainConfig,
    steps: u64,
    seed: u64,
) -> Result<DqnResult> {
    config.check()?;
    for t in instance.types() {
        t.model.ensure_valid()?;
    }
    let encoding = Encoding::for_instance(instance)?;
    let labels: Vec<String> = instance
        .types()
        .iter()
        .map(|t| t.model.label().to_owned())
        .collect();
    let mut widths = vec![encoding.input_dim()];
    widths.extend(&config.hidden);
    widths.push(2);

    let n = instance.num_arms();
    let m = instance.budget();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut main = Mlp::new(&widths, &mut rng)?;
    let mut target = main.clone();
    let mut optimizer = Adam::new(&main, config.learning_rate);
    let mut buffer = ReplayBuffer::new(config.replay_capacity)?;
    let mut states: Vec<State> = (0..n)
        .map(|i| rng.random_range(0..instance.arm(i).num_states()))
        .collect();
    let mut lambda = config.initial_lambda;
    let mut epsilon = config.exploration.initial;
    let mut ma = MovingAverage::new(TRACE_WINDOW);
    let mut trace = Vec::with_capacity((steps / config.trace_every) as usize);
    let mut losses = Vec::new();
    let mut reward_total = 0.0;
    let mut batches = 0u64;
    let mut input = vec![0.0f32; encoding.input_dim()];

    for step_n in 1..=steps {
        let beta = config.beta.at(step_n);
        let mut active = 0usize;
        let mut reward = 0.0;
        let mut step_loss = 0.0;
        let mut step_batches = 0u32;
        for i in 0..n {
            let arm_type = instance.type_of(i);
            let arm = instance.arm(i);
            let x = states[i];
            encoding.write(arm_type, x, &mut input);
            let u: Action = eps_greedy(q_values(&main, &input), epsilon, &mut rng);
            let y = step(arm, x, u, &mut rng);
            let r = arm.reward(x, u);
            reward += r;
            active += u.index();
            buffer.push(Transition {
                arm_type,
                state: x,
                action: u,
                reward: r,
                next_state: y,
                lambda,
            });
            if buffer.len() >= config.batch_size {
                let batch = buffer.sample(config.batch_size, &mut rng)?;
                step_loss += train_batch(&mut main, &target, &mut optimizer, &encoding, &batch)?;
                step_batches += 1;
            }
            states[i] = y;
        }
        batches += step_batches as u64;
        if step_batches > 0 {
            losses.push((step_n, step_loss / step_batches as f64));
        }
        if step_n % config.sync_period == 0 {
            sync_target(&main, &mut target)?;
        }
        lambda = dual_step(lambda, beta, active, m);
        if !lambda.is_finite() {
            return Err(Error::NonFinite(format!(
                "multiplier diverged at step {step_n}"
            )));
        }
        epsilon = config.exploration.next(epsilon);
        reward_total += reward;
        let avg = ma.push(reward);
        if step_n % config.trace_every == 0 {
            trace.push(TraceRow {
                n: step_n,
                lambda,
                avg_reward: avg,
                epsilon,
                active,
            });
        }
    }
    let indices = index_tables(&main, &encoding, &labels)?;
    Ok(DqnResult {
        trace,
        losses,
        final_lambda: lambda,
        epsilon,
        main,
        indices,
        average_reward: if steps > 0 {
            reward_total / steps as f64
        } else {
            0.0
        },
        batches_trained: batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::make_nonindexable_arm;
    use ndarray::array;

    fn transition(action: Action, reward: f64, lambda: f64) -> Transition {
        Transition {
            arm_type: 0,
            state: 0,
            action,
            reward,
            next_state: 1,
            lambda,
        }
    }

    #[test]
    fn target_reduces_to_reward_for_zero_values() {
        let t = transition(Action::Active, 0.7, 0.0);
        assert_eq!(q_target(&t, [0.0, 0.0], 0.0), 0.7);
    }

    #[test]
    fn target_cancels_constant_values() {
        let t = transition(Action::Active, 0.7, -0.25);
        assert!((q_target(&t, [3.0, 3.0], 3.0) - 0.45).abs() < 1e-12);
        let p = transition(Action::Passive, 0.7, -0.25);
        assert!((q_target(&p, [3.0, 3.0], 3.0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn encoding_layout() {
        let one = Encoding::new(vec![4]).unwrap();
        assert_eq!(one.encode(0, 2), vec![0.5]);
        let two = Encoding::new(vec![4, 10]).unwrap();
        assert_eq!(two.encode(1, 5), vec![1.0, 0.5]);
        assert_eq!(two.batch(0, &[0, 1]), array![[0.0, 0.0], [0.0, 0.25]]);
        assert!(Encoding::new(vec![]).is_err());
    }

    #[test]
    fn grid_is_capped() {
        assert_eq!(evaluation_grid(3, 512), vec![0, 1, 2]);
        let g = evaluation_grid(1000, 512);
        assert_eq!(g.len(), 512);
        assert_eq!((g[0], g[511]), (0, 999));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sync_makes_outputs_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let main = Mlp::new(&[2, 32, 16, 2], &mut rng).unwrap();
        let mut target = Mlp::new(&[2, 32, 16, 2], &mut rng).unwrap();
        let init = target.clone();
        assert_eq!(target, init);
        sync_target(&main, &mut target).unwrap();
        let x = Array2::from_shape_simple_fn((100, 2), || rng.random::<f32>() * 4.0 - 2.0);
        assert_eq!(main.forward(x.view()), target.forward(x.view()));
        let mut other = Mlp::new(&[1, 4, 2], &mut rng).unwrap();
        assert!(sync_target(&main, &mut other).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        // Zero output layer: every output is zero, targets r − f with r = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut main = Mlp::new(&[1, 8, 2], &mut rng).unwrap();
        main.layers[1].weights.fill(0.0);
        main.layers[1].bias.fill(0.0);
        let target = main.clone();
        let before = main.clone();
        let enc = Encoding::new(vec![3]).unwrap();
        let mut opt = Adam::new(&main, 1e-3);
        let batch = vec![transition(Action::Passive, 0.0, 0.0); 4];
        let loss = train_batch(&mut main, &target, &mut opt, &enc, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(main, before);
    }

    #[test]
    fn sync_period_one_keeps_target_current() {
        let arm = make_nonindexable_arm();
        let inst = BanditInstance::homogeneous(arm, 4, 1).unwrap();
        let config = TrainConfig {
            hidden: vec![16, 8],
            batch_size: 4,
            replay_capacity: 50,
            learning_rate: 1e-3,
            sync_period: 1,
            ..TrainConfig::default()
        };
        let res = run_dqn(&inst, &config, 30, 1).unwrap();
        assert!(res.batches_trained > 0);
        assert!(res.losses.iter().all(|&(_, l)| l.is_finite() && l >= 0.0));
        assert!(res.main.is_finite());
    }

    #[test]
    fn exploration_reaches_floor() {
        let arm = make_nonindexable_arm();
        let inst = BanditInstance::homogeneous(arm, 2, 1).unwrap();
        let config = TrainConfig {
            hidden: vec![4],
            batch_size: 100_000,
            replay_capacity: 100_000,
            ..TrainConfig::default()
        };
        let res = run_dqn(&inst, &config, 10_000, 0).unwrap();
        assert_eq!(res.batches_trained, 0);
        assert!((res.epsilon - 0.01).abs() < 1e-12);
        assert!((0.9995f64.powi(10_000) - 0.0067).abs() < 1e-4);
    }

    #[test]
    fn identical_seeds_replay_exactly() {
        let arm = make_nonindexable_arm();
        let inst = BanditInstance::homogeneous(arm, 3, 1).unwrap();
        let config = TrainConfig {
            hidden: vec![16, 8],
            batch_size: 8,
            replay_capacity: 64,
            ..TrainConfig::default()
        };
        let a = run_dqn(&inst, &config, 40, 5).unwrap();
        let b = run_dqn(&inst, &config, 40, 5).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.main, b.main);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let inst = BanditInstance::homogeneous(make_nonindexable_arm(), 2, 1).unwrap();
        let bad = TrainConfig {
            batch_size: 2000,
            ..TrainConfig::default()
        };
        assert!(matches!(run_dqn(&inst, &bad, 1, 0), Err(Error::Config(_))));
        let bad = TrainConfig {
            sync_period: 0,
            ..TrainConfig::default()
        };
        assert!(run_dqn(&inst, &bad, 1, 0).is_err());
    }
}
