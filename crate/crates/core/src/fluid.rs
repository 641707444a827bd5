//! Population (fluid) dynamics of index policies and finite-`N` optimality gaps.
//!
//! In the fluid model a fraction `ν(x)` of the arms of each type sits in state
//! `x`. Each step, state groups are ranked by index across all types and
//! activated in order until a mass `α` is active; the boundary group is split
//! deterministically. Active and passive mass then moves through the
//! respective kernels.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::arm::{Action, ArmModel, BanditInstance, State};
use crate::error::{Error, Result};
use crate::exact::{activation_rate, stationary_distribution, IndexSource, IndexTable};
use crate::models::{make_restart_arm, RestartArmSpec};
use crate::restart::{restart_dual, restart_index_table, restart_lambda_star};
use crate::sim::{simulate, SimConfig, SimPolicy};

/// Tolerance on the total mass of a population state.
pub const MASS_TOL: f64 = 1e-12;

/// Fraction of arms in each state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub nu: Vec<f64>,
}

impl PopulationState {
    pub fn new(nu: Vec<f64>) -> Result<Self> {
        if nu.is_empty() || nu.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InputDomain(
                "population entries must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = nu.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InputDomain(format!(
                "population mass {total} is not 1"
            )));
        }
        Ok(PopulationState { nu })
    }

    pub fn uniform(num_states: usize) -> Self {
        PopulationState {
            nu: vec![1.0 / num_states as f64; num_states],
        }
    }

    /// All mass in state `x`.
    pub fn corner(num_states: usize, x: State) -> Self {
        let mut nu = vec![0.0; num_states];
        nu[x] = 1.0;
        PopulationState { nu }
    }

    pub fn mass(&self) -> f64 {
        self.nu.iter().sum()
    }

    pub fn l1_distance(&self, other: &PopulationState) -> f64 {
        self.nu
            .iter()
            .zip(&other.nu)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

type SparseRows = Vec<Vec<(State, f64)>>;

fn sparse_rows(arm: &ArmModel, u: Action) -> SparseRows {
    (0..arm.num_states())
        .map(|x| {
            arm.row(x, u)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0.0)
                .map(|(y, &p)| (y, p))
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug)]
struct FluidType {
    arm: Arc<ArmModel>,
    weight: f64,
    passive: SparseRows,
    active: SparseRows,
}

/// Arm types with population weights, a pooled index ranking and a budget fraction.
#[derive(Clone, Debug)]
pub struct FluidSystem {
    types: Vec<FluidType>,
    /// `(type, state)` groups of equal index, in descending index order.
    groups: Vec<Vec<(usize, State)>>,
    alpha: f64,
}

/// Outcome of one fluid step.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidStep {
    pub next: Vec<PopulationState>,
    /// Activation probability of every state of every type.
    pub activation: Vec<Vec<f64>>,
    /// Total active mass, weighted by type.
    pub activated_mass: f64,
    /// Expected per-arm reward of this step.
    pub reward: f64,
}

impl FluidSystem {
    /// `types` holds `(arm, population weight, index table)`; weights must sum to 1.
    pub fn new(types: Vec<(Arc<ArmModel>, f64, IndexTable)>, alpha: f64) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::InputDomain(
                "fluid system needs at least one arm type".into(),
            ));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InputDomain(format!("alpha {alpha} outside (0, 1)")));
        }
        let total: f64 = types.iter().map(|t| t.1).sum();
        if (total - 1.0).abs() > 1e-12 || types.iter().any(|t| !(t.1 > 0.0)) {
            return Err(Error::InputDomain(
                "type weights must be positive and sum to 1".into(),
            ));
        }
        let mut ranked = Vec::new();
        for (t, (arm, _, index)) in types.iter().enumerate() {
            arm.ensure_valid()?;
            if index.len() != arm.num_states() {
                return Err(Error::ShapeMismatch(format!(
                    "index table with {} entries for arm '{}' with {} states",
                    index.len(),
                    arm.label(),
                    arm.num_states()
                )));
            }
            ranked.extend((0..arm.num_states()).map(|x| (index.get(x), t, x)));
        }
        if ranked.iter().any(|r| !r.0.is_finite()) {
            return Err(Error::InputDomain("index values must be finite".into()));
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut groups: Vec<Vec<(usize, State)>> = Vec::new();
        let mut last = f64::NAN;
        for (v, t, x) in ranked {
            if v == last {
                groups.last_mut().expect("group exists").push((t, x));
            } else {
                groups.push(vec![(t, x)]);
                last = v;
            }
        }
        let types = types
            .into_iter()
            .map(|(arm, weight, _)| FluidType {
                passive: sparse_rows(&arm, Action::Passive),
                active: sparse_rows(&arm, Action::Active),
                arm,
                weight,
            })
            .collect();
        Ok(FluidSystem {
            types,
            groups,
            alpha,
        })
    }

    /// One arm type.
    pub fn single(arm: Arc<ArmModel>, index: IndexTable, alpha: f64) -> Result<Self> {
        Self::new(vec![(arm, 1.0, index)], alpha)
    }

    /// Types, weights and budget fraction of a finite instance.
    pub fn from_instance(instance: &BanditInstance, tables: &[IndexTable]) -> Result<Self> {
        if tables.len() != instance.types().len() {
            return Err(Error::ShapeMismatch(
                "one index table per arm type required".into(),
            ));
        }
        let n = instance.num_arms() as f64;
        let types = instance
            .types()
            .iter()
            .zip(tables)
            .map(|(t, table)| (t.model.clone(), t.count() as f64 / n, table.clone()))
            .collect();
        Self::new(types, instance.alpha())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// Corner starts in the first and last state of every type, and the uniform start.
    pub fn default_starts(&self) -> Vec<Vec<PopulationState>> {
        let sizes: Vec<usize> = self.types.iter().map(|t| t.arm.num_states()).collect();
        vec![
            sizes
                .iter()
                .map(|&n| PopulationState::corner(n, 0))
                .collect(),
            sizes
                .iter()
                .map(|&n| PopulationState::corner(n, n - 1))
                .collect(),
            sizes.iter().map(|&n| PopulationState::uniform(n)).collect(),
        ]
    }

    fn check_population(&self, nu: &[PopulationState]) -> Result<()> {
        if nu.len() != self.types.len() {
            return Err(Error::ShapeMismatch(
                "one population state per arm type required".into(),
            ));
        }
        for (p, t) in nu.iter().zip(&self.types) {
            if p.nu.len() != t.arm.num_states() {
                return Err(Error::ShapeMismatch(format!(
                    "population of {} states for arm '{}'",
                    p.nu.len(),
                    t.arm.label()
                )));
            }
        }
        Ok(())
    }

    /// Activation probabilities for the pooled ranking at `nu`.
    pub fn activation(&self, nu: &[PopulationState]) -> Vec<Vec<f64>> {
        let mut act: Vec<Vec<f64>> = self
            .types
            .iter()
            .map(|t| vec![0.0; t.arm.num_states()])
            .collect();
        let mut remaining = self.alpha;
        for group in &self.groups {
            if remaining <= 0.0 {
                break;
            }
            let mass: f64 = group
                .iter()
                .map(|&(t, x)| self.types[t].weight * nu[t].nu[x])
                .sum();
            if mass <= 0.0 {
                continue;
            }
            // Boundary split κ, shared by every state of a tied group.
            let kappa = if mass <= remaining {
                1.0
            } else {
                remaining / mass
            };
            for &(t, x) in group {
                act[t][x] = kappa;
            }
            remaining -= kappa * mass;
        }
        act
    }

    /// Applies one step of the pooled index policy.
    pub fn step(&self, nu: &[PopulationState]) -> Result<FluidStep> {
        self.check_population(nu)?;
        let activation = self.activation(nu);
        let mut next = Vec::with_capacity(nu.len());
        let mut activated = 0.0;
        let mut reward = 0.0;
        for ((t, p), a) in self.types.iter().zip(nu).zip(&activation) {
            let mut out = vec![0.0; p.nu.len()];
            for (x, &mass) in p.nu.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let (on, off) = (mass * a[x], mass * (1.0 - a[x]));
                activated += t.weight * on;
                reward += t.weight
                    * (on * t.arm.reward(x, Action::Active)
                        + off * t.arm.reward(x, Action::Passive));
                for &(y, q) in &t.active[x] {
                    out[y] += on * q;
                }
                for &(y, q) in &t.passive[x] {
                    out[y] += off * q;
                }
            }
            next.push(PopulationState { nu: out });
        }
        Ok(FluidStep {
            next,
            activation,
            activated_mass: activated,
            reward,
        })
    }
}

/// One step of a single-type population.
pub fn fluid_step(
    arm: &ArmModel,
    nu: &PopulationState,
    index: &IndexTable,
    alpha: f64,
) -> Result<PopulationState> {
    let system = FluidSystem::single(Arc::new(arm.clone()), index.clone(), alpha)?;
    let mut out = system.step(std::slice::from_ref(nu))?;
    Ok(out.next.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttractorStatus {
    Unique,
    Multiple,
    NoConvergence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidOptions {
    /// Stop once `‖ν_{n+1} − ν_n‖₁ < tol`, summed over types.
    pub tol: f64,
    pub max_iter: usize,
    /// Two limits are the same fixed point if their L1 distance is below this.
    pub match_tol: f64,
    /// Trace rows are kept every `trace_every` iterations.
    pub trace_every: usize,
}

impl Default for FluidOptions {
    fn default() -> Self {
        FluidOptions {
            tol: 1e-10,
            max_iter: 100_000,
            match_tol: 1e-6,
            trace_every: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidTraceRow {
    pub start: usize,
    pub iter: usize,
    pub l1_change: f64,
    pub activated_mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FluidRun {
    pub limit: Vec<PopulationState>,
    pub iterations: usize,
    pub converged: bool,
    pub final_change: f64,
    /// Per-arm reward at the limit.
    pub reward: f64,
    /// Largest deviation of the total mass from 1 seen during the run.
    pub max_mass_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FluidReport {
    pub status: AttractorStatus,
    pub runs: Vec<FluidRun>,
    /// The common limit when the status is unique.
    pub fixed_point: Option<Vec<PopulationState>>,
    /// Distinct limits (one per cluster within `match_tol`).
    pub distinct_limits: Vec<Vec<PopulationState>>,
    pub trace: Vec<FluidTraceRow>,
}

impl FluidReport {
    /// Per-arm reward at the fixed point.
    pub fn reward(&self) -> Option<f64> {
        self.fixed_point.as_ref().map(|_| self.runs[0].reward)
    }
}

fn distance(a: &[PopulationState], b: &[PopulationState]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.l1_distance(y)).sum()
}

/// Iterates the flow from every start and classifies the limits.
pub fn fluid_fixed_point(
    system: &FluidSystem,
    starts: &[Vec<PopulationState>],
    opts: FluidOptions,
) -> Result<FluidReport> {
    if starts.len() < 3 {
        return Err(Error::InputDomain(
            "at least three starting populations are required".into(),
        ));
    }
    if opts.trace_every == 0 {
        return Err(Error::Config("trace_every must be positive".into()));
    }
    let mut runs = Vec::with_capacity(starts.len());
    let mut trace = Vec::new();
    for (s, start) in starts.iter().enumerate() {
        for p in start {
            PopulationState::new(p.nu.clone())?;
        }
        let mut nu = start.clone();
        let mut change = f64::INFINITY;
        let mut iterations = 0;
        let mut reward = 0.0;
        let mut max_mass_error: f64 = 0.0;
        while iterations < opts.max_iter {
            let out = system.step(&nu)?;
            change = distance(&out.next, &nu);
            iterations += 1;
            reward = out.reward;
            for p in &out.next {
                max_mass_error = max_mass_error.max((p.mass() - 1.0).abs());
            }
            if iterations % opts.trace_every == 0 || change < opts.tol {
                trace.push(FluidTraceRow {
                    start: s,
                    iter: iterations,
                    l1_change: change,
                    activated_mass: out.activated_mass,
                });
            }
            nu = out.next;
            if change < opts.tol {
                break;
            }
        }
        runs.push(FluidRun {
            limit: nu,
            iterations,
            converged: change < opts.tol,
            final_change: change,
            reward,
            max_mass_error,
        });
    }
    let mut distinct: Vec<Vec<PopulationState>> = Vec::new();
    for run in &runs {
        if !distinct
            .iter()
            .any(|d| distance(d, &run.limit) < opts.match_tol)
        {
            distinct.push(run.limit.clone());
        }
    }
    let status = if runs.iter().any(|r| !r.converged) {
        AttractorStatus::NoConvergence
    } else if distinct.len() == 1 {
        AttractorStatus::Unique
    } else {
        AttractorStatus::Multiple
    };
    Ok(FluidReport {
        status,
        fixed_point: (status == AttractorStatus::Unique).then(|| distinct[0].clone()),
        distinct_limits: distinct,
        runs,
        trace,
    })
}

/// Stationary threshold-type policy meeting `α` on average for one arm type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryIndexPolicy {
    pub policy: Vec<f64>,
    /// Randomized boundary state, if any.
    pub boundary: Option<State>,
    /// Activation probability of the boundary state.
    pub beta: f64,
    pub activation_rate: f64,
    /// Set when the boundary state has zero stationary mass, so no `β` can
    /// reach `α` exactly.
    pub degenerate: bool,
}

/// Activates states in decreasing index order until the stationary
/// activation rate reaches `α`, randomizing the boundary state with the
/// probability `β` that attains `α` exactly.
pub fn stationary_index_policy(
    arm: &ArmModel,
    index: &IndexTable,
    alpha: f64,
) -> Result<StationaryIndexPolicy> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InputDomain(format!("alpha {alpha} outside [0, 1]")));
    }
    if index.len() != arm.num_states() {
        return Err(Error::ShapeMismatch(
            "index table and arm sizes differ".into(),
        ));
    }
    let mut order: Vec<State> = (0..arm.num_states()).collect();
    order.sort_by(|&a, &b| index.get(b).total_cmp(&index.get(a)).then(a.cmp(&b)));
    let rate_of = |policy: &[f64]| -> Result<f64> {
        let pi = stationary_distribution(arm, policy)?;
        Ok(activation_rate(policy, &pi))
    };
    let mut policy = vec![0.0; arm.num_states()];
    let mut rate = rate_of(&policy)?;
    if rate >= alpha {
        return Ok(StationaryIndexPolicy {
            policy,
            boundary: None,
            beta: 0.0,
            activation_rate: rate,
            degenerate: false,
        });
    }
    for &x in &order {
        policy[x] = 1.0;
        let full = rate_of(&policy)?;
        if full < alpha {
            rate = full;
            continue;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let low_rate = rate;
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            policy[x] = mid;
            if rate_of(&policy)? < alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        policy[x] = hi;
        let attained = rate_of(&policy)?;
        return Ok(StationaryIndexPolicy {
            policy,
            boundary: Some(x),
            beta: hi,
            activation_rate: attained,
            degenerate: (full - low_rate).abs() < 1e-15,
        });
    }
    Ok(StationaryIndexPolicy {
        policy,
        boundary: None,
        beta: 1.0,
        activation_rate: rate,
        degenerate: false,
    })
}

/// Budget of the size-`N` system: the smallest integer exceeding `αN`.
pub fn budget_for_size(alpha: f64, n: usize) -> usize {
    (alpha * n as f64 + 1e-9).floor() as usize + 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub sizes: Vec<usize>,
    pub horizon: u64,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub n: usize,
    pub budget: usize,
    /// Simulated LIP reward per arm, averaged over seeds.
    pub per_arm_reward: f64,
    /// Relaxed dual value per arm at `M_N/N`.
    pub bound: f64,
    pub gap: f64,
    pub stderr: f64,
    pub lambda_star: f64,
}

/// Optimality gap of the restart LIP policy: `types` gives each restart arm
/// type with its population weight.
pub fn restart_optimality_gap(
    types: &[(RestartArmSpec, f64)],
    alpha: f64,
    config: &GapConfig,
) -> Result<Vec<GapRow>> {
    if config.seeds.is_empty() || config.sizes.is_empty() {
        return Err(Error::Config("gap curve needs sizes and seeds".into()));
    }
    let mut rows = Vec::with_capacity(config.sizes.len());
    for &n in &config.sizes {
        let counts: Vec<usize> = types
            .iter()
            .map(|(_, w)| {
                let c = w * n as f64;
                if (c - c.round()).abs() > 1e-9 {
                    Err(Error::InputDomain(format!(
                        "size {n} does not split into the type weights"
                    )))
                } else {
                    Ok(c.round() as usize)
                }
            })
            .collect::<Result<_>>()?;
        if counts.iter().sum::<usize>() != n {
            return Err(Error::InputDomain(format!(
                "type weights do not sum to 1 at size {n}"
            )));
        }
        let m = budget_for_size(alpha, n);
        if m >= n {
            return Err(Error::InputDomain(format!(
                "budget {m} leaves no passive arm at size {n}"
            )));
        }
        let alpha_n = m as f64 / n as f64;
        let mix: Vec<(RestartArmSpec, usize)> = types
            .iter()
            .map(|(s, _)| *s)
            .zip(counts.iter().copied())
            .collect();
        let dual = restart_lambda_star(&mix, alpha_n, None, 1e-10)?;
        let bound = restart_dual(&mix, dual.lambda_star, alpha_n)? / n as f64;
        let mut groups = Vec::with_capacity(mix.len());
        let mut tables = Vec::with_capacity(mix.len());
        for (spec, c) in &mix {
            groups.push((make_restart_arm(*spec)?, *c));
            let values = restart_index_table(spec, dual.lambda_star, spec.x_max)?;
            tables.push(IndexTable::new(
                values,
                IndexSource::Lagrangian {
                    lambda: dual.lambda_star,
                },
                spec.label(),
            )?);
        }
        let instance = BanditInstance::from_groups(groups, m)?;
        let policy = SimPolicy::Lip(tables);
        let mut rewards = Vec::with_capacity(config.seeds.len());
        let mut var = 0.0;
        for &seed in &config.seeds {
            let stats = simulate(&instance, &policy, &SimConfig::new(config.horizon, seed))?;
            rewards.push(stats.average_reward / n as f64);
            var += (stats.stderr / n as f64).powi(2);
        }
        let k = rewards.len() as f64;
        let per_arm = rewards.iter().sum::<f64>() / k;
        rows.push(GapRow {
            n,
            budget: m,
            per_arm_reward: per_arm,
            bound,
            gap: bound - per_arm,
            stderr: var.sqrt() / k,
            lambda_star: dual.lambda_star,
        });
    }
    Ok(rows)
}
