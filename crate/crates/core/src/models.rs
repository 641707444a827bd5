//! Benchmark environments: the restart (freshness) arm, a three-state
//! non-indexable arm and the deadline scheduling arm.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::arm::{ArmModel, State};
use crate::error::{Error, Result};

/// Parameters of one restart arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartArmSpec {
    /// Probe success probability.
    pub p: f64,
    /// Importance weight.
    pub w: f64,
    /// Truncation state used by simulations and numeric cross-checks.
    pub x_max: usize,
}

impl RestartArmSpec {
    pub fn new(p: f64, w: f64, x_max: usize) -> Result<Self> {
        let spec = RestartArmSpec { p, w, x_max };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) || !(self.w > 0.0) || self.x_max < 3 {
            return Err(Error::InputDomain(format!(
                "restart arm needs 0 < p <= 1, w > 0, x_max >= 3 (got p={}, w={}, x_max={})",
                self.p, self.w, self.x_max
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("restart(p={},w={})", self.p, self.w)
    }
}

/// Canonical four restart types, 25 arms each, budget 16.
pub const RESTART_FIXTURE_TYPES: [(f64, f64); 4] =
    [(0.95, 0.9), (0.95, 0.2), (0.7, 0.95), (0.7, 0.2)];
pub const RESTART_FIXTURE_COUNT: usize = 25;
pub const RESTART_FIXTURE_BUDGET: usize = 16;

/// Dense index of freshness state `x >= 1`.
pub fn restart_state_index(x: usize) -> State {
    x - 1
}

/// Freshness state of dense index `s`.
pub fn restart_state_value(s: State) -> usize {
    s + 1
}

/// Restart arm truncated at `x_max`: freshness `1..=x_max` stored as `0..x_max`.
///
/// Active: back to 1 with probability `p`, else one step older. Passive:
/// one step older. Ages saturate at `x_max`. Reward is `−w·x`.
pub fn make_restart_arm(spec: RestartArmSpec) -> Result<ArmModel> {
    spec.check()?;
    let n = spec.x_max;
    let mut k0 = vec![0.0; n * n];
    let mut k1 = vec![0.0; n * n];
    for s in 0..n {
        let older = (s + 1).min(n - 1);
        k0[s * n + older] = 1.0;
        k1[s * n] += spec.p;
        k1[s * n + older] += 1.0 - spec.p;
    }
    let reward: Vec<f64> = (0..n)
        .map(|s| -spec.w * restart_state_value(s) as f64)
        .collect();
    ArmModel::new(k0, k1, reward.clone(), reward, spec.label())
}

/// The three-state arm whose passive sets are not nested in the multiplier.
pub fn make_nonindexable_arm() -> ArmModel {
    let p0 = [
        vec![0.005, 0.793, 0.202],
        vec![0.027, 0.558, 0.415],
        vec![0.736, 0.249, 0.015],
    ];
    let p1 = [
        vec![0.718, 0.254, 0.028],
        vec![0.347, 0.097, 0.556],
        vec![0.015, 0.956, 0.029],
    ];
    ArmModel::from_rows(
        &p0,
        &p1,
        vec![0.0; 3],
        vec![0.699, 0.362, 0.715],
        "nonindexable",
    )
    .expect("fixed shapes")
}

pub const DEADLINE_T_MAX: usize = 12;
pub const DEADLINE_B_MAX: usize = 9;
/// Size of the full `(T, B)` grid, `13 × 10`.
pub const DEADLINE_GRID: usize = (DEADLINE_T_MAX + 1) * (DEADLINE_B_MAX + 1);

/// Remaining time `t` and remaining workload `b` of a job slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeadlineState {
    pub t: usize,
    pub b: usize,
}

impl DeadlineState {
    pub const EMPTY: DeadlineState = DeadlineState { t: 0, b: 0 };

    /// `T·10 + B`.
    pub fn packed(self) -> usize {
        self.t * (DEADLINE_B_MAX + 1) + self.b
    }

    pub fn unpack(i: usize) -> Self {
        DeadlineState {
            t: i / (DEADLINE_B_MAX + 1),
            b: i % (DEADLINE_B_MAX + 1),
        }
    }
}

/// Terminal penalty `F(b) = 0.2·b²`.
pub fn deadline_penalty(b: f64) -> f64 {
    0.2 * b * b
}

/// Distribution of the job placed in a slot after a deadline expires.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreshDistribution {
    pub outcomes: Vec<(DeadlineState, f64)>,
}

impl FreshDistribution {
    /// Uniform over `(0,0)` and every `(T, B)` with `1 ≤ T ≤ 12`, `1 ≤ B ≤ 9`.
    pub fn uniform() -> Self {
        let mut states = vec![DeadlineState::EMPTY];
        for t in 1..=DEADLINE_T_MAX {
            for b in 1..=DEADLINE_B_MAX {
                states.push(DeadlineState { t, b });
            }
        }
        let p = 1.0 / states.len() as f64;
        FreshDistribution {
            outcomes: states.into_iter().map(|s| (s, p)).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        let total: f64 = self.outcomes.iter().map(|(_, p)| p).sum();
        let in_grid = self
            .outcomes
            .iter()
            .all(|(s, p)| s.t <= DEADLINE_T_MAX && s.b <= DEADLINE_B_MAX && *p >= 0.0);
        if !in_grid || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InputDomain(
                "fresh distribution must be a probability vector on the (T, B) grid".into(),
            ));
        }
        Ok(())
    }
}

/// Deadline arm together with its dense state map.
#[derive(Clone, Debug)]
pub struct DeadlineArm {
    pub arm: ArmModel,
    /// Dense index → `(T, B)`, sorted by packed index; `(0,0)` is index 0 when reachable.
    pub states: Vec<DeadlineState>,
    dense_of: Vec<Option<State>>,
    pub cost: f64,
}

impl DeadlineArm {
    pub fn index_of(&self, s: DeadlineState) -> Option<State> {
        if s.t > DEADLINE_T_MAX || s.b > DEADLINE_B_MAX {
            return None;
        }
        self.dense_of[s.packed()]
    }

    pub fn num_reachable(&self) -> usize {
        self.states.len()
    }
}

fn deadline_next(s: DeadlineState, active: bool) -> Option<DeadlineState> {
    (s.t > 1).then(|| DeadlineState {
        t: s.t - 1,
        b: s.b.saturating_sub(active as usize),
    })
}

fn deadline_reward(s: DeadlineState, active: bool, c: f64) -> f64 {
    let a = active as usize as f64;
    if s.b > 0 && s.t > 1 {
        (1.0 - c) * a
    } else if s.b > 0 && s.t == 1 {
        (1.0 - c) * a - deadline_penalty(s.b as f64 - a)
    } else {
        0.0
    }
}

/// Deadline scheduling arm with activation cost `c`.
///
/// For `T > 1` the slot moves to `(T−1, (B−a)⁺)`; for `T ≤ 1` a fresh job is
/// drawn from `fresh`. States never reached from the fresh support are
/// dropped and the rest are remapped densely in packed order.
pub fn make_deadline_arm(c: f64, fresh: &FreshDistribution) -> Result<DeadlineArm> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InputDomain(format!(
            "activation cost {c} outside [0, 1]"
        )));
    }
    fresh.check()?;
    let mut reachable: BTreeSet<DeadlineState> = BTreeSet::new();
    let mut frontier: Vec<DeadlineState> = fresh
        .outcomes
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(s, _)| *s)
        .collect();
    while let Some(s) = frontier.pop() {
        if !reachable.insert(s) {
            continue;
        }
        for active in [false, true] {
            if let Some(next) = deadline_next(s, active) {
                frontier.push(next);
            }
        }
    }
    let states: Vec<DeadlineState> = reachable.into_iter().collect();
    let mut dense_of = vec![None; DEADLINE_GRID];
    for (i, s) in states.iter().enumerate() {
        dense_of[s.packed()] = Some(i);
    }
    let n = states.len();
    let mut kernels = [vec![0.0; n * n], vec![0.0; n * n]];
    let mut rewards = [vec![0.0; n], vec![0.0; n]];
    for (i, &s) in states.iter().enumerate() {
        for (a, active) in [false, true].into_iter().enumerate() {
            rewards[a][i] = deadline_reward(s, active, c);
            match deadline_next(s, active) {
                Some(next) => {
                    let j = dense_of[next.packed()].expect("closed under transitions");
                    kernels[a][i * n + j] = 1.0;
                }
                None => {
                    for (f, p) in &fresh.outcomes {
                        if *p > 0.0 {
                            let j = dense_of[f.packed()].expect("fresh support is reachable");
                            kernels[a][i * n + j] += p;
                        }
                    }
                }
            }
        }
    }
    let [k0, k1] = kernels;
    let [r0, r1] = rewards;
    let arm = ArmModel::new(k0, k1, r0, r1, format!("deadline(c={c})"))?;
    Ok(DeadlineArm {
        arm,
        states,
        dense_of,
        cost: c,
    })
}

/// Closed-form deadline Whittle index, three-branch formula:
/// `0` if `B = 0`; `1 − c` if `1 ≤ B ≤ T − 1`; `F(B−T−1) − F(B−T) + 1 − c` if `T ≤ B`.
pub fn deadline_whittle(t: usize, b: usize, c: f64) -> f64 {
    let (tf, bf) = (t as f64, b as f64);
    if b == 0 {
        0.0
    } else if b + 1 <= t {
        1.0 - c
    } else {
        deadline_penalty(bf - tf - 1.0) - deadline_penalty(bf - tf) + 1.0 - c
    }
}

/// Variant third branch `F(B−T+1) − F(B−T) + 1 − c`, reported for comparison.
pub fn deadline_whittle_alternative(t: usize, b: usize, c: f64) -> f64 {
    let (tf, bf) = (t as f64, b as f64);
    if b == 0 {
        0.0
    } else if b + 1 <= t {
        1.0 - c
    } else {
        deadline_penalty(bf - tf + 1.0) - deadline_penalty(bf - tf) + 1.0 - c
    }
}

/// Activation costs of the heterogeneous deadline experiment (5 arms each).
pub const DEADLINE_HETEROGENEOUS_COSTS: [f64; 4] = [0.1, 0.3, 0.6, 0.8];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::Action;

    #[test]
    fn restart_transitions() {
        let arm = make_restart_arm(RestartArmSpec::new(0.7, 0.5, 10).unwrap()).unwrap();
        assert_eq!(arm.prob(0, Action::Passive, 1), 1.0);
        assert_eq!(arm.prob(4, Action::Active, 0), 0.7);
        assert!((arm.prob(4, Action::Active, 5) - 0.3).abs() < 1e-15);
        assert_eq!(arm.prob(9, Action::Passive, 9), 1.0);
        assert_eq!(arm.reward(2, Action::Active), -1.5);
        let sure = make_restart_arm(RestartArmSpec::new(1.0, 0.5, 10).unwrap()).unwrap();
        assert_eq!(sure.prob(4, Action::Active, 0), 1.0);
        assert!(arm.validate().is_valid());
    }

    #[test]
    fn restart_spec_domain() {
        assert!(RestartArmSpec::new(0.0, 1.0, 10).is_err());
        assert!(RestartArmSpec::new(0.5, 0.0, 10).is_err());
        assert!(RestartArmSpec::new(0.5, 1.0, 2).is_err());
        assert!(RestartArmSpec::new(1.0, 1.0, 3).is_ok());
    }

    #[test]
    fn nonindexable_golden_values() {
        let arm = make_nonindexable_arm();
        let p0 = [
            0.005, 0.793, 0.202, 0.027, 0.558, 0.415, 0.736, 0.249, 0.015,
        ];
        let p1 = [
            0.718, 0.254, 0.028, 0.347, 0.097, 0.556, 0.015, 0.956, 0.029,
        ];
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(arm.prob(x, Action::Passive, y), p0[3 * x + y]);
                assert_eq!(arm.prob(x, Action::Active, y), p1[3 * x + y]);
            }
            let s0: f64 = arm.row(x, Action::Passive).iter().sum();
            let s1: f64 = arm.row(x, Action::Active).iter().sum();
            assert!((s0 - 1.0).abs() <= 1e-12 && (s1 - 1.0).abs() <= 1e-12);
            assert_eq!(arm.reward(x, Action::Passive), 0.0);
        }
        assert_eq!(arm.reward(1, Action::Active), 0.362);
        assert_eq!(arm.reward(0, Action::Active), 0.699);
        assert_eq!(arm.reward(2, Action::Active), 0.715);
        assert!(arm.validate().is_valid());
    }

    #[test]
    fn deadline_dynamics_and_rewards() {
        let d = make_deadline_arm(0.8, &FreshDistribution::uniform()).unwrap();
        let at = |t, b| d.index_of(DeadlineState { t, b }).unwrap();
        assert_eq!(at(0, 0), 0);
        assert_eq!(d.arm.prob(at(4, 2), Action::Active, at(3, 1)), 1.0);
        assert_eq!(d.arm.prob(at(4, 2), Action::Passive, at(3, 2)), 1.0);
        assert!((d.arm.reward(at(1, 3), Action::Passive) + 1.8).abs() < 1e-12);
        assert!((d.arm.reward(at(1, 3), Action::Active) - (0.2 - 0.8)).abs() < 1e-12);
        assert!((d.arm.reward(at(5, 2), Action::Active) - 0.2).abs() < 1e-12);
        assert_eq!(d.arm.reward(at(0, 0), Action::Active), 0.0);
        let fresh = 1.0 / 109.0;
        assert!((d.arm.prob(at(0, 0), Action::Active, at(7, 3)) - fresh).abs() < 1e-15);
        assert!((d.arm.prob(at(1, 0), Action::Passive, at(0, 0)) - fresh).abs() < 1e-15);
        assert!(d.arm.validate().is_valid());
    }

    #[test]
    fn deadline_reachable_states() {
        let d = make_deadline_arm(0.8, &FreshDistribution::uniform()).unwrap();
        // (0,0), 12 x 9 fresh jobs, and finished jobs (T,0) for T = 1..=11.
        assert_eq!(d.num_reachable(), 120);
        assert!(d.index_of(DeadlineState { t: 12, b: 0 }).is_none());
        assert!(d.index_of(DeadlineState { t: 0, b: 4 }).is_none());
        assert_eq!(DEADLINE_GRID, 130);
        assert!(d.states.windows(2).all(|w| w[0].packed() < w[1].packed()));
    }

    #[test]
    fn deadline_whittle_spot_values() {
        assert_eq!(deadline_whittle(7, 0, 0.8), 0.0);
        assert!((deadline_whittle(5, 2, 0.8) - 0.2).abs() < 1e-12);
        assert!((deadline_whittle(1, 3, 0.8) + 0.4).abs() < 1e-12);
        // Second branch is constant over its region.
        for t in 2..=12 {
            for b in 1..t.min(10) {
                assert!((deadline_whittle(t, b, 0.3) - 0.7).abs() < 1e-12);
            }
        }
        assert!((deadline_whittle_alternative(1, 3, 0.8) - (1.8 - 0.8 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn bad_cost_rejected() {
        assert!(make_deadline_arm(1.5, &FreshDistribution::uniform()).is_err());
    }
}
