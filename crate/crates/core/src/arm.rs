//! Arms, bandit instances and the multiplier convention.
//!
//! An [`ArmModel`] is a finite two-action Markov decision process. States are
//! dense integers `0..num_states`; environment builders in [`crate::models`]
//! own the mapping to semantic states.
//!
//! Every module uses [`LambdaConvention::ActiveBonus`]: the multiplier `λ` is
//! added to the reward of the active action, so the per-arm reward seen by the
//! relaxed problem is `r(x, u) + λ·u`.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type State = usize;

/// Tolerance on kernel row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Passive = 0,
    Active = 1,
}

impl Action {
    pub const BOTH: [Action; 2] = [Action::Passive, Action::Active];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_active(self) -> bool {
        self == Action::Active
    }

    pub fn from_bool(active: bool) -> Self {
        if active {
            Action::Active
        } else {
            Action::Passive
        }
    }
}

impl TryFrom<usize> for Action {
    type Error = Error;

    fn try_from(u: usize) -> Result<Self> {
        match u {
            0 => Ok(Action::Passive),
            1 => Ok(Action::Active),
            _ => Err(Error::InputDomain(format!("action {u} is not in {{0, 1}}"))),
        }
    }
}

/// Where the Lagrange multiplier enters the per-arm reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LambdaConvention {
    /// `λ·u` is added to the reward; `λ < 0` taxes activation.
    ActiveBonus,
}

impl LambdaConvention {
    pub const CURRENT: LambdaConvention = LambdaConvention::ActiveBonus;

    pub fn name(self) -> &'static str {
        "ACTIVE_BONUS"
    }

    /// One-line description written into output headers and manifests.
    pub fn header(self) -> &'static str {
        "ACTIVE_BONUS: lambda*u is added to the active reward; Whittle indices are \
         reported as passive subsidies (negated active-bonus roots); Lagrangian \
         indices are Q(x,1)-Q(x,0) under the active bonus"
    }
}

impl fmt::Display for LambdaConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Nonzero entries of one kernel row with running cumulative probabilities.
#[derive(Clone, Debug, Default)]
pub(crate) struct SparseRow {
    pub(crate) cols: Vec<usize>,
    pub(crate) probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SparseRow {
    fn from_dense(row: &[f64]) -> Self {
        let mut out = SparseRow::default();
        let mut acc = 0.0;
        for (y, &p) in row.iter().enumerate() {
            if p != 0.0 {
                acc += p;
                out.cols.push(y);
                out.probs.push(p);
                out.cumulative.push(acc);
            }
        }
        out
    }

    pub(crate) fn expect(&self, values: &[f64]) -> f64 {
        self.cols
            .iter()
            .zip(&self.probs)
            .map(|(&y, &p)| p * values[y])
            .sum()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let total = *self.cumulative.last().expect("empty kernel row");
        let u: f64 = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.cols[k.min(self.cols.len() - 1)]
    }
}

/// A finite-state arm with passive (0) and active (1) actions.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "ArmFile", into = "ArmFile")]
pub struct ArmModel {
    num_states: usize,
    kernel: [Vec<f64>; 2],
    reward: [Vec<f64>; 2],
    label: String,
    #[serde(skip)]
    sparse: OnceLock<[Vec<SparseRow>; 2]>,
    #[serde(skip)]
    report: OnceLock<ValidationReport>,
}

impl fmt::Debug for ArmModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ArmModel")
            .field("label", &self.label)
            .field("num_states", &self.num_states)
            .finish_non_exhaustive()
    }
}

impl PartialEq for ArmModel {
    fn eq(&self, other: &Self) -> bool {
        self.num_states == other.num_states
            && self.kernel == other.kernel
            && self.reward == other.reward
            && self.label == other.label
    }
}

impl ArmModel {
    /// Builds an arm from row-major kernels (`n*n` each) and reward vectors.
    ///
    /// Only shapes are checked here; stochasticity and irreducibility are
    /// reported by [`ArmModel::validate`].
    pub fn new(
        kernel0: Vec<f64>,
        kernel1: Vec<f64>,
        reward0: Vec<f64>,
        reward1: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let n = reward0.len();
        if n == 0 {
            return Err(Error::InputDomain("arm needs at least one state".into()));
        }
        if reward1.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "reward1 has {} entries, expected {n}",
                reward1.len()
            )));
        }
        for (a, k) in [&kernel0, &kernel1].into_iter().enumerate() {
            if k.len() != n * n {
                return Err(Error::ShapeMismatch(format!(
                    "kernel{a} has {} entries, expected {}",
                    k.len(),
                    n * n
                )));
            }
        }
        Ok(ArmModel {
            num_states: n,
            kernel: [kernel0, kernel1],
            reward: [reward0, reward1],
            label: label.into(),
            sparse: OnceLock::new(),
            report: OnceLock::new(),
        })
    }

    /// Builds an arm from nested rows.
    pub fn from_rows(
        kernel0: &[Vec<f64>],
        kernel1: &[Vec<f64>],
        reward0: Vec<f64>,
        reward1: Vec<f64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        let flat = |k: &[Vec<f64>]| k.iter().flatten().copied().collect::<Vec<_>>();
        Self::new(flat(kernel0), flat(kernel1), reward0, reward1, label)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Dense kernel row `p(·|x, u)`.
    pub fn row(&self, x: State, u: Action) -> &[f64] {
        let n = self.num_states;
        &self.kernel[u.index()][x * n..(x + 1) * n]
    }

    pub fn prob(&self, x: State, u: Action, y: State) -> f64 {
        self.kernel[u.index()][x * self.num_states + y]
    }

    /// Raw reward `r(x, u)` without the multiplier term.
    pub fn reward(&self, x: State, u: Action) -> f64 {
        self.reward[u.index()][x]
    }

    pub fn rewards(&self, u: Action) -> &[f64] {
        &self.reward[u.index()]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward
            .iter()
            .flatten()
            .fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    pub(crate) fn sparse_rows(&self, u: Action) -> &[SparseRow] {
        let rows = self.sparse.get_or_init(|| {
            let build = |a: Action| {
                (0..self.num_states)
                    .map(|x| SparseRow::from_dense(self.row(x, a)))
                    .collect::<Vec<_>>()
            };
            [build(Action::Passive), build(Action::Active)]
        });
        &rows[u.index()]
    }

    pub fn check_state(&self, x: State) -> Result<()> {
        if x < self.num_states {
            Ok(())
        } else {
            Err(Error::InputDomain(format!(
                "state {x} out of range for arm '{}' with {} states",
                self.label, self.num_states
            )))
        }
    }

    /// Runs (once) and returns the validation report.
    pub fn validate(&self) -> &ValidationReport {
        self.report.get_or_init(|| validate_arm(self))
    }

    /// Errors unless the arm passed validation.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidArm(format!("'{}': {report}", self.label)))
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Parses the arm JSON format and validates the result.
    pub fn from_json(text: &str) -> Result<Self> {
        let arm: ArmModel = serde_json::from_str(text)?;
        arm.ensure_valid()?;
        Ok(arm)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// On-disk arm definition with row-major kernels.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmFile {
    pub states: usize,
    pub kernel0: Vec<f64>,
    pub kernel1: Vec<f64>,
    pub reward0: Vec<f64>,
    pub reward1: Vec<f64>,
    #[serde(default)]
    pub label: String,
}

impl TryFrom<ArmFile> for ArmModel {
    type Error = Error;

    fn try_from(f: ArmFile) -> Result<Self> {
        if f.reward0.len() != f.states {
            return Err(Error::ShapeMismatch(format!(
                "'states' is {} but reward0 has {} entries",
                f.states,
                f.reward0.len()
            )));
        }
        ArmModel::new(f.kernel0, f.kernel1, f.reward0, f.reward1, f.label)
    }
}

impl From<ArmModel> for ArmFile {
    fn from(arm: ArmModel) -> Self {
        let [kernel0, kernel1] = arm.kernel;
        let [reward0, reward1] = arm.reward;
        ArmFile {
            states: arm.num_states,
            kernel0,
            kernel1,
            reward0,
            reward1,
            label: arm.label,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowViolation {
    pub state: State,
    pub action: Action,
    pub sum: f64,
    pub has_negative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub row_violations: Vec<RowViolation>,
    pub non_finite_rewards: Vec<(State, Action)>,
    /// Union graph of both kernels is strongly connected.
    pub irreducible: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.row_violations.is_empty() && self.non_finite_rewards.is_empty() && self.irreducible
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("valid, irreducible");
        }
        let mut parts = Vec::new();
        for v in &self.row_violations {
            parts.push(format!(
                "row (state {}, action {}) sums to {}{}",
                v.state,
                v.action.index(),
                v.sum,
                if v.has_negative {
                    " with negative entries"
                } else {
                    ""
                }
            ));
        }
        for (x, u) in &self.non_finite_rewards {
            parts.push(format!(
                "reward at (state {x}, action {}) not finite",
                u.index()
            ));
        }
        if !self.irreducible {
            parts.push("not irreducible".into());
        }
        f.write_str(&parts.join("; "))
    }
}

/// Checks kernel rows, reward finiteness and strong connectivity of the
/// union graph of both actions' kernels.
pub fn validate_arm(arm: &ArmModel) -> ValidationReport {
    let n = arm.num_states;
    let mut row_violations = Vec::new();
    let mut non_finite_rewards = Vec::new();
    for u in Action::BOTH {
        for x in 0..n {
            let row = arm.row(x, u);
            let sum: f64 = row.iter().sum();
            let has_negative = row.iter().any(|&p| p < 0.0 || !p.is_finite());
            if has_negative || !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                row_violations.push(RowViolation {
                    state: x,
                    action: u,
                    sum,
                    has_negative,
                });
            }
            if !arm.reward(x, u).is_finite() {
                non_finite_rewards.push((x, u));
            }
        }
    }

    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(x) = queue.pop_front() {
            for y in 0..n {
                let edge =
                    |a: State, b: State| Action::BOTH.iter().any(|&u| arm.prob(a, u, b) > 0.0);
                let linked = if forward { edge(x, y) } else { edge(y, x) };
                if linked && !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    let irreducible = reach(true) && reach(false);

    ValidationReport {
        row_violations,
        non_finite_rewards,
        irreducible,
    }
}

/// `r(x, u) + λ·u`.
pub fn subsidized_reward(arm: &ArmModel, x: State, u: Action, lambda: f64) -> Result<f64> {
    arm.check_state(x)?;
    Ok(arm.reward(x, u) + if u.is_active() { lambda } else { 0.0 })
}

/// Unchecked variant for inner loops.
#[inline]
pub(crate) fn subsidized(arm: &ArmModel, x: State, u: Action, lambda: f64) -> f64 {
    arm.reward(x, u) + if u.is_active() { lambda } else { 0.0 }
}

/// Draws the next state from `p(·|x, u)`.
pub fn sample_transition<R: Rng + ?Sized>(
    arm: &ArmModel,
    x: State,
    u: Action,
    rng: &mut R,
) -> Result<State> {
    arm.check_state(x)?;
    Ok(step(arm, x, u, rng))
}

#[inline]
pub(crate) fn step<R: Rng + ?Sized>(arm: &ArmModel, x: State, u: Action, rng: &mut R) -> State {
    arm.sparse_rows(u)[x].sample(rng)
}

/// A group of identical arms inside an instance.
#[derive(Clone, Debug)]
pub struct ArmType {
    pub model: Arc<ArmModel>,
    pub members: Vec<usize>,
}

impl ArmType {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// `N` arms with an exact per-step activation budget `M`.
#[derive(Clone, Debug)]
pub struct BanditInstance {
    arms: Vec<Arc<ArmModel>>,
    budget: usize,
    alpha: f64,
    types: Vec<ArmType>,
    type_of: Vec<usize>,
}

impl BanditInstance {
    /// Arms sharing a label must be identical models; they form one type.
    pub fn new(arms: Vec<Arc<ArmModel>>, budget: usize) -> Result<Self> {
        let n = arms.len();
        if budget == 0 || budget >= n {
            return Err(Error::InputDomain(format!(
                "budget must satisfy 1 <= M < N, got M={budget}, N={n}"
            )));
        }
        let mut types: Vec<ArmType> = Vec::new();
        let mut type_of = Vec::with_capacity(n);
        for (i, arm) in arms.iter().enumerate() {
            let found = types.iter().position(|t| t.model.label() == arm.label());
            let t = match found {
                Some(t) => {
                    let model = &types[t].model;
                    if !Arc::ptr_eq(model, arm) && **model != **arm {
                        return Err(Error::InputDomain(format!(
                            "arms {} and {i} share label '{}' but differ",
                            types[t].members[0],
                            arm.label()
                        )));
                    }
                    t
                }
                None => {
                    types.push(ArmType {
                        model: Arc::clone(arm),
                        members: Vec::new(),
                    });
                    types.len() - 1
                }
            };
            types[t].members.push(i);
            type_of.push(t);
        }
        Ok(BanditInstance {
            alpha: budget as f64 / n as f64,
            arms,
            budget,
            types,
            type_of,
        })
    }

    /// `count` copies of one arm.
    pub fn homogeneous(arm: ArmModel, count: usize, budget: usize) -> Result<Self> {
        let arm = Arc::new(arm);
        Self::new(vec![arm; count], budget)
    }

    /// Concatenates `(arm, count)` groups in order.
    pub fn from_groups(groups: Vec<(ArmModel, usize)>, budget: usize) -> Result<Self> {
        let mut arms = Vec::new();
        for (arm, count) in groups {
            let arm = Arc::new(arm);
            arms.extend(std::iter::repeat_n(arm, count));
        }
        Self::new(arms, budget)
    }

    pub fn arms(&self) -> &[Arc<ArmModel>] {
        &self.arms
    }

    pub fn arm(&self, i: usize) -> &ArmModel {
        &self.arms[i]
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn types(&self) -> &[ArmType] {
        &self.types
    }

    pub fn type_of(&self, arm: usize) -> usize {
        self.type_of[arm]
    }

    /// `(model, count)` pairs, the form used by the dual solvers.
    pub fn mix(&self) -> Vec<(Arc<ArmModel>, usize)> {
        self.types
            .iter()
            .map(|t| (Arc::clone(&t.model), t.count()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_arm(n: usize) -> ArmModel {
        let mut k = vec![0.0; n * n];
        for x in 0..n {
            k[x * n + x] = 1.0;
        }
        ArmModel::new(k.clone(), k, vec![0.0; n], vec![1.0; n], "id").unwrap()
    }

    fn two_state(a: f64, b: f64) -> ArmModel {
        let k = vec![1.0 - a, a, b, 1.0 - b];
        ArmModel::new(k.clone(), k, vec![0.0, 1.0], vec![0.0, 1.0], "flip").unwrap()
    }

    #[test]
    fn subsidized_reward_examples() {
        let arm = ArmModel::new(vec![1.0], vec![1.0], vec![0.5], vec![2.0], "one").unwrap();
        assert_eq!(
            subsidized_reward(&arm, 0, Action::Active, -0.5).unwrap(),
            1.5
        );
        assert_eq!(
            subsidized_reward(&arm, 0, Action::Passive, 7.0).unwrap(),
            0.5
        );
        assert!(matches!(
            subsidized_reward(&arm, 3, Action::Active, 0.0),
            Err(Error::InputDomain(_))
        ));
        assert!(Action::try_from(2).is_err());
    }

    #[test]
    fn identity_kernel_is_not_irreducible() {
        let report = validate_arm(&identity_arm(3));
        assert!(report.row_violations.is_empty());
        assert!(!report.irreducible);
        assert!(!report.is_valid());
    }

    #[test]
    fn short_row_is_reported() {
        let k0 = vec![0.5, 0.4, 0.5, 0.5];
        let k1 = vec![0.5, 0.5, 0.5, 0.5];
        let arm = ArmModel::new(k0, k1, vec![0.0; 2], vec![0.0; 2], "bad").unwrap();
        let report = arm.validate();
        assert_eq!(report.row_violations.len(), 1);
        assert_eq!(report.row_violations[0].state, 0);
        assert_eq!(report.row_violations[0].action, Action::Passive);
        assert!((report.row_violations[0].sum - 0.9).abs() < 1e-12);
        assert!(arm.ensure_valid().is_err());
    }

    #[test]
    fn degenerate_row_always_samples_its_target() {
        let arm = two_state(1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(
                sample_transition(&arm, 0, Action::Passive, &mut rng).unwrap(),
                1
            );
        }
    }

    #[test]
    fn empirical_row_frequency() {
        let arm = two_state(0.7, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| sample_transition(&arm, 0, Action::Active, &mut rng).unwrap() == 1)
            .count();
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.7).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn chi_square_on_three_outcomes() {
        let row = [0.2, 0.5, 0.3];
        let k: Vec<f64> = row.iter().chain(&row).chain(&row).copied().collect();
        let arm = ArmModel::new(k.clone(), k, vec![0.0; 3], vec![0.0; 3], "c").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[step(&arm, 1, Action::Passive, &mut rng)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(row)
            .map(|(&c, p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // chi-square critical value, 2 degrees of freedom, significance 0.01
        assert!(chi2 < 9.210, "chi2 = {chi2}");
    }

    #[test]
    fn fixed_seed_gives_identical_draws() {
        let arm = two_state(0.3, 0.6);
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut x = 0;
            (0..100)
                .map(|_| {
                    x = sample_transition(&arm, x, Action::Active, &mut rng).unwrap();
                    x
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn json_round_trip_and_validation_on_load() {
        let arm = two_state(0.3, 0.6);
        let text = arm.to_json().unwrap();
        let back = ArmModel::from_json(&text).unwrap();
        assert_eq!(arm, back);
        let bad = identity_arm(2).to_json().unwrap();
        assert!(matches!(
            ArmModel::from_json(&bad),
            Err(Error::InvalidArm(_))
        ));
        let extra = text.replacen('{', "{\"bogus\": 1,", 1);
        assert!(ArmModel::from_json(&extra).is_err());
    }

    #[test]
    fn instance_budget_bounds() {
        let arm = two_state(0.3, 0.6);
        assert!(BanditInstance::homogeneous(arm.clone(), 3, 0).is_err());
        assert!(BanditInstance::homogeneous(arm.clone(), 3, 3).is_err());
        let inst = BanditInstance::homogeneous(arm, 4, 1).unwrap();
        assert_eq!(inst.alpha(), 0.25);
        assert_eq!(inst.types().len(), 1);
        assert_eq!(inst.types()[0].count(), 4);
    }

    #[test]
    fn same_label_different_model_is_rejected() {
        let a = Arc::new(two_state(0.3, 0.6));
        let b = Arc::new(two_state(0.4, 0.6));
        assert!(BanditInstance::new(vec![a, b], 1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn subsidy_is_affine_with_slope_u(r0 in -10.0..10.0f64, r1 in -10.0..10.0f64,
                                              l1 in -50.0..50.0f64, l2 in -50.0..50.0f64) {
                let arm = ArmModel::new(vec![1.0], vec![1.0], vec![r0], vec![r1], "p").unwrap();
                for u in Action::BOTH {
                    let at0 = subsidized_reward(&arm, 0, u, 0.0).unwrap();
                    prop_assert_eq!(at0, arm.reward(0, u));
                    let a = subsidized_reward(&arm, 0, u, l1).unwrap();
                    let b = subsidized_reward(&arm, 0, u, l2).unwrap();
                    if (l1 - l2).abs() > 1e-6 {
                        let slope = (a - b) / (l1 - l2);
                        prop_assert!((slope - u.index() as f64).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
