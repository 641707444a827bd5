//! Lagrangian and Whittle index tables, passive sets and indexability.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::rvi::{rvi_q, rvi_q_warm, QTable, RviOptions};
use crate::arm::{ArmModel, State};
use crate::error::{Error, Result};

/// States with `|γ(x)|` at or below this are boundary states (classified passive).
pub const TIE_TOL: f64 = 1e-9;

/// Default number of coarse grid points scanned before bisecting.
pub const WHITTLE_GRID_POINTS: usize = 201;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IndexSource {
    Lagrangian {
        lambda: f64,
    },
    Whittle,
    /// Closed-form or externally supplied values.
    External,
}

/// Per-state index values used to rank arms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexTable {
    pub values: Vec<f64>,
    pub source: IndexSource,
    pub arm_label: String,
}

impl IndexTable {
    pub fn new(
        values: Vec<f64>,
        source: IndexSource,
        arm_label: impl Into<String>,
    ) -> Result<Self> {
        if let Some(x) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InputDomain(format!(
                "index value at state {x} is not finite"
            )));
        }
        Ok(IndexTable {
            values,
            source,
            arm_label: arm_label.into(),
        })
    }

    pub fn get(&self, x: State) -> f64 {
        self.values[x]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `γ(x) = Q(x,1) − Q(x,0)`.
pub fn lagrangian_index_table(q: &QTable, arm_label: &str) -> IndexTable {
    IndexTable {
        values: (0..q.num_states()).map(|x| q.gamma(x)).collect(),
        source: IndexSource::Lagrangian { lambda: q.lambda },
        arm_label: arm_label.to_owned(),
    }
}

/// Convenience: solve at `lambda` and return the Lagrangian index table.
pub fn lagrangian_index(arm: &ArmModel, lambda: f64, opts: RviOptions) -> Result<IndexTable> {
    let q = rvi_q(arm, lambda, opts)?;
    Ok(lagrangian_index_table(&q, arm.label()))
}

fn passive_from_table(q: &QTable) -> BTreeSet<State> {
    (0..q.num_states())
        .filter(|&x| {
            let g = q.gamma(x);
            g < 0.0 || g.abs() <= TIE_TOL
        })
        .collect()
}

/// States rendered passive by the optimal policy at `lambda`.
pub fn passive_set(arm: &ArmModel, lambda: f64, opts: RviOptions) -> Result<BTreeSet<State>> {
    Ok(passive_from_table(&rvi_q(arm, lambda, opts)?))
}

/// Whittle index of one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhittleIndex {
    /// Passive subsidy making both actions equally attractive.
    pub index: f64,
    /// More than one sign change was seen on the coarse grid.
    pub multiple_roots: bool,
}

/// Options for the Whittle root search.
#[derive(Clone, Copy, Debug)]
pub struct WhittleOptions {
    pub bracket: (f64, f64),
    pub tol: f64,
    pub grid_points: usize,
    pub rvi: RviOptions,
}

impl WhittleOptions {
    pub fn new(bracket: (f64, f64), tol: f64) -> Self {
        WhittleOptions {
            bracket,
            tol,
            grid_points: WHITTLE_GRID_POINTS,
            rvi: RviOptions::default(),
        }
    }
}

fn sign_change(a: f64, b: f64) -> bool {
    (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0) || a == 0.0
}

/// Whittle indices for every state of `arm`, sharing one coarse grid scan.
///
/// Under the active-bonus convention the root `λ_a(x)` of
/// `λ ↦ Q_λ(x,1) − Q_λ(x,0)` is the activation tax at which `x` is indifferent;
/// the returned index is the equivalent passive subsidy `−λ_a(x)`, so larger
/// values mean more urgent states. The first sign change scanning upward is
/// bisected; further sign changes set `multiple_roots`.
pub fn whittle_table(arm: &ArmModel, opts: WhittleOptions) -> Result<Vec<WhittleIndex>> {
    let (lo, hi) = opts.bracket;
    if !(lo < hi) || opts.grid_points < 2 || !(opts.tol > 0.0) {
        return Err(Error::InputDomain(format!(
            "whittle search needs lo < hi, >= 2 grid points and tol > 0 (got [{lo}, {hi}])"
        )));
    }
    let n = arm.num_states();
    let m = opts.grid_points;
    let grid: Vec<f64> = (0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .collect();
    let mut gammas: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut tables: Vec<QTable> = Vec::with_capacity(m);
    for &l in &grid {
        let q = rvi_q_warm(arm, l, opts.rvi, tables.last())?;
        gammas.push((0..n).map(|x| q.gamma(x)).collect());
        tables.push(q);
    }
    let mut out = Vec::with_capacity(n);
    for x in 0..n {
        let changes: Vec<usize> = (0..m - 1)
            .filter(|&i| sign_change(gammas[i][x], gammas[i + 1][x]))
            .collect();
        let Some(&first) = changes.first() else {
            return Err(Error::Bracket(format!(
                "no sign change of Q(x,1)-Q(x,0) for state {x} of '{}' in [{lo}, {hi}]",
                arm.label()
            )));
        };
        let root = if gammas[first][x] == 0.0 {
            grid[first]
        } else {
            bisect_state(arm, x, grid[first], grid[first + 1], &tables[first], opts)?
        };
        out.push(WhittleIndex {
            index: if root == 0.0 { 0.0 } else { -root },
            multiple_roots: changes.len() > 1,
        });
    }
    Ok(out)
}

fn bisect_state(
    arm: &ArmModel,
    x: State,
    mut a: f64,
    mut b: f64,
    warm: &QTable,
    opts: WhittleOptions,
) -> Result<f64> {
    let mut fa = warm.gamma(x);
    let mut last = warm.clone();
    while b - a > opts.tol {
        let mid = 0.5 * (a + b);
        let q = rvi_q_warm(arm, mid, opts.rvi, Some(&last))?;
        let fm = q.gamma(x);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fa < 0.0) == (fm < 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
        last = q;
    }
    Ok(0.5 * (a + b))
}

/// Whittle index of a single state. See [`whittle_table`] for the orientation.
pub fn whittle_index(arm: &ArmModel, x: State, opts: WhittleOptions) -> Result<WhittleIndex> {
    arm.check_state(x)?;
    let (lo, hi) = opts.bracket;
    if !(lo < hi) || opts.grid_points < 2 {
        return Err(Error::InputDomain(format!("bad bracket [{lo}, {hi}]")));
    }
    let m = opts.grid_points;
    let mut prev: Option<(f64, f64, QTable)> = None;
    let mut found: Option<(f64, f64, f64, QTable)> = None;
    let mut extra_change = false;
    for i in 0..m {
        let l = lo + (hi - lo) * i as f64 / (m - 1) as f64;
        let q = rvi_q_warm(arm, l, opts.rvi, prev.as_ref().map(|p| &p.2))?;
        let g = q.gamma(x);
        if let Some((pl, pg, pq)) = prev.take() {
            if sign_change(pg, g) {
                if found.is_none() {
                    found = Some((pl, pg, l, pq));
                } else {
                    extra_change = true;
                    break;
                }
            }
        }
        prev = Some((l, g, q));
    }
    let Some((a, ga, b, qa)) = found else {
        return Err(Error::Bracket(format!(
            "no sign change for state {x} of '{}' in [{lo}, {hi}]",
            arm.label()
        )));
    };
    let root = if ga == 0.0 {
        a
    } else {
        bisect_state(arm, x, a, b, &qa, opts)?
    };
    Ok(WhittleIndex {
        index: if root == 0.0 { 0.0 } else { -root },
        multiple_roots: extra_change,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Indexability {
    Indexable,
    /// Passive sets at `lambdas.0 < lambdas.1` are not nested.
    NonIndexable {
        lambdas: (f64, f64),
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct IndexabilityReport {
    pub verdict: Indexability,
    pub grid: Vec<f64>,
    pub passive_sets: Vec<BTreeSet<State>>,
}

impl IndexabilityReport {
    pub fn is_indexable(&self) -> bool {
        self.verdict == Indexability::Indexable
    }
}

/// Checks that passive sets are nested along an ascending grid.
///
/// With the multiplier on the active action, raising `λ` makes activation
/// more attractive, so indexability means the passive set can only shrink as
/// `λ` increases (the mirror image of a growing set under a passive subsidy).
pub fn indexability_check(
    arm: &ArmModel,
    lambda_grid: &[f64],
    opts: RviOptions,
) -> Result<IndexabilityReport> {
    if lambda_grid.len() < 3 || lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InputDomain(
            "lambda grid must be strictly ascending with at least 3 points".into(),
        ));
    }
    let mut sets = Vec::with_capacity(lambda_grid.len());
    let mut last: Option<QTable> = None;
    for &l in lambda_grid {
        let q = rvi_q_warm(arm, l, opts, last.as_ref())?;
        sets.push(passive_from_table(&q));
        last = Some(q);
    }
    let mut verdict = Indexability::Indexable;
    'outer: for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if !sets[j].is_subset(&sets[i]) {
                verdict = Indexability::NonIndexable {
                    lambdas: (lambda_grid[i], lambda_grid[j]),
                };
                break 'outer;
            }
        }
    }
    Ok(IndexabilityReport {
        verdict,
        grid: lambda_grid.to_vec(),
        passive_sets: sets,
    })
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2);
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::make_nonindexable_arm;

    fn symmetric_arm() -> ArmModel {
        let k = vec![0.3, 0.7, 0.6, 0.4];
        let r = vec![1.0, 0.2];
        ArmModel::new(k.clone(), k, r.clone(), r, "sym").unwrap()
    }

    #[test]
    fn index_is_difference_of_columns() {
        let q = QTable {
            values: vec![[1.0, 3.0]],
            lambda: 0.0,
            gain: 2.0,
            residual: 0.0,
            iterations: 1,
        };
        assert_eq!(lagrangian_index_table(&q, "a").values, vec![2.0]);
    }

    #[test]
    fn symmetric_arm_index_is_constant_lambda() {
        let t = lagrangian_index(&symmetric_arm(), 0.75, RviOptions::default()).unwrap();
        for v in t.values {
            assert!((v - 0.75).abs() < 1e-8);
        }
    }

    #[test]
    fn extreme_multipliers_dominate() {
        let arm = make_nonindexable_arm();
        let all = passive_set(&arm, -1e6, RviOptions::default()).unwrap();
        assert_eq!(all, (0..3).collect());
        let none = passive_set(&arm, 1e6, RviOptions::default()).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn symmetric_arm_whittle_index_is_zero() {
        let w = whittle_table(&symmetric_arm(), WhittleOptions::new((-1.0, 1.0), 1e-9)).unwrap();
        for wi in w {
            assert!(wi.index.abs() < 1e-8);
        }
        let single =
            whittle_index(&symmetric_arm(), 1, WhittleOptions::new((-0.77, 1.0), 1e-9)).unwrap();
        assert!(single.index.abs() < 1e-8);
    }

    #[test]
    fn missing_sign_change_is_a_bracket_error() {
        let r = whittle_index(&symmetric_arm(), 0, WhittleOptions::new((0.5, 1.0), 1e-6));
        assert!(matches!(r, Err(Error::Bracket(_))));
    }

    #[test]
    fn symmetric_arm_is_indexable() {
        let grid = linear_grid(-1.0, 1.0, 11);
        let rep = indexability_check(&symmetric_arm(), &grid, RviOptions::default()).unwrap();
        assert!(rep.is_indexable());
        for s in &rep.passive_sets {
            assert!(s.is_empty() || s.len() == 2);
        }
    }

    #[test]
    fn grid_must_be_ascending() {
        let arm = symmetric_arm();
        assert!(indexability_check(&arm, &[0.0, 1.0], RviOptions::default()).is_err());
        assert!(indexability_check(&arm, &[0.0, 2.0, 1.0], RviOptions::default()).is_err());
    }

    #[test]
    fn nonindexable_arm_has_non_nested_passive_sets() {
        let arm = make_nonindexable_arm();
        let grid = linear_grid(-1.0, 1.0, 201);
        let rep = indexability_check(&arm, &grid, RviOptions::default()).unwrap();
        let Indexability::NonIndexable { lambdas: (a, b) } = rep.verdict else {
            panic!("expected a non-indexable verdict");
        };
        let sa = passive_set(&arm, a, RviOptions::default()).unwrap();
        let sb = passive_set(&arm, b, RviOptions::default()).unwrap();
        assert!(!sb.is_subset(&sa));
    }
}
