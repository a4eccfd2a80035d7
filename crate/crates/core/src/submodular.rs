//! Set functions over grid states.
//!
//! Every oracle evaluates a normalized, non-negative, monotone submodular
//! function `F: 2^V -> R` on sets of [`StateKey`]s. The marginal gain of `v`
//! with respect to `S` is `F(S + v) - F(S)`; diminishing returns means the
//! gain never grows as `S` grows.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::gp::{IncrementalCholesky, SquaredExponential, JITTER};

/// A grid cell. Ordering is lexicographic in `(row, col)`, which is the
/// tie-breaking order used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    pub row: u32,
    pub col: u32,
}

impl StateKey {
    pub const fn new(row: u32, col: u32) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

pub type StateSet = BTreeSet<StateKey>;

/// Per-state offset `-0.5 * log2(JITTER)`. Adding it to `0.5 * log2(var +
/// JITTER)` makes a zero-variance state contribute exactly zero.
pub const ENTROPY_OFFSET: f64 = 9.965_784_284_662_087;

/// The offset rounded to six decimals.
pub const ROUNDED_ENTROPY_OFFSET: f64 = 9.965784;

/// A set function evaluated on sets of states.
///
/// Implementations must be deterministic, return `0` on the empty set and be
/// non-negative. `gain` and `residual` have generic defaults in terms of
/// `evaluate`; override them when a closed form exists.
pub trait SubmodularOracle: Send + Sync {
    fn evaluate(&self, set: &StateSet) -> f64;

    /// `F(S + v) - F(S)`. The caller guarantees `v` is not in `set`.
    fn gain(&self, v: StateKey, set: &StateSet) -> f64 {
        let mut with = set.clone();
        with.insert(v);
        self.evaluate(&with) - self.evaluate(set)
    }

    /// `F(V) - F(V - u)` for `u` in `full`.
    fn residual(&self, u: StateKey, full: &StateSet) -> f64 {
        let mut rest = full.clone();
        rest.remove(&u);
        self.gain(u, &rest)
    }
}

impl<T: SubmodularOracle + ?Sized> SubmodularOracle for &T {
    fn evaluate(&self, set: &StateSet) -> f64 {
        (**self).evaluate(set)
    }
    fn gain(&self, v: StateKey, set: &StateSet) -> f64 {
        (**self).gain(v, set)
    }
    fn residual(&self, u: StateKey, full: &StateSet) -> f64 {
        (**self).residual(u, full)
    }
}

impl<T: SubmodularOracle + ?Sized> SubmodularOracle for Box<T> {
    fn evaluate(&self, set: &StateSet) -> f64 {
        (**self).evaluate(set)
    }
    fn gain(&self, v: StateKey, set: &StateSet) -> f64 {
        (**self).gain(v, set)
    }
    fn residual(&self, u: StateKey, full: &StateSet) -> f64 {
        (**self).residual(u, full)
    }
}

/// Marginal gain `F(S + v) - F(S)`; rejects `v` already in `S`.
pub fn marginal_gain<F: SubmodularOracle + ?Sized>(
    oracle: &F,
    v: StateKey,
    set: &StateSet,
) -> Result<f64> {
    if set.contains(&v) {
        return Err(Error::ElementInSet(v));
    }
    Ok(oracle.gain(v, set))
}

/// `F(S) = |union of D_s over s in S|`.
#[derive(Debug, Clone, Default)]
pub struct CoverageFunction {
    patches: HashMap<StateKey, BTreeSet<u64>>,
}

impl CoverageFunction {
    pub fn new(patches: HashMap<StateKey, BTreeSet<u64>>) -> Self {
        Self { patches }
    }

    pub fn patch(&self, s: StateKey) -> Option<&BTreeSet<u64>> {
        self.patches.get(&s)
    }

    fn covered<'a>(&'a self, set: impl IntoIterator<Item = &'a StateKey>) -> BTreeSet<u64> {
        set.into_iter()
            .filter_map(|s| self.patches.get(s))
            .flatten()
            .copied()
            .collect()
    }
}

impl SubmodularOracle for CoverageFunction {
    fn evaluate(&self, set: &StateSet) -> f64 {
        self.covered(set).len() as f64
    }

    fn gain(&self, v: StateKey, set: &StateSet) -> f64 {
        let Some(patch) = self.patches.get(&v) else {
            return 0.0;
        };
        let covered = self.covered(set);
        patch.iter().filter(|c| !covered.contains(c)).count() as f64
    }

    fn residual(&self, u: StateKey, full: &StateSet) -> f64 {
        let Some(patch) = self.patches.get(&u) else {
            return 0.0;
        };
        let others = self.covered(full.iter().filter(|&&s| s != u));
        patch.iter().filter(|c| !others.contains(c)).count() as f64
    }
}

/// `F(S) = sum of w_s over the set S`. Modular, so gains ignore `S`.
///
/// States without an explicit weight have weight zero.
#[derive(Debug, Clone, Default)]
pub struct WeightedNodeFunction {
    weights: HashMap<StateKey, f64>,
}

impl WeightedNodeFunction {
    pub fn new(weights: HashMap<StateKey, f64>) -> Result<Self> {
        if let Some((s, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(invalid(format!(
                "weight of {s} must be finite and >= 0, got {w}"
            )));
        }
        Ok(Self { weights })
    }

    pub fn weight(&self, s: StateKey) -> f64 {
        self.weights.get(&s).copied().unwrap_or(0.0)
    }
}

impl SubmodularOracle for WeightedNodeFunction {
    fn evaluate(&self, set: &StateSet) -> f64 {
        set.iter().map(|&s| self.weight(s)).sum()
    }

    fn gain(&self, v: StateKey, _set: &StateSet) -> f64 {
        self.weight(v)
    }

    fn residual(&self, u: StateKey, _full: &StateSet) -> f64 {
        self.weight(u)
    }
}

/// `F(S) = 0.5 * log2 det(K_S + 1e-6 I) + ENTROPY_OFFSET * |S|` with a
/// squared-exponential Gram matrix over cell positions.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogDetEntropyFunction {
    kernel: SquaredExponential,
}

impl LogDetEntropyFunction {
    pub fn new(kernel: SquaredExponential) -> Self {
        Self { kernel }
    }

    pub fn kernel(&self) -> &SquaredExponential {
        &self.kernel
    }

    /// Entropy of a point sequence that may contain repeats. The result is
    /// accumulated pivot by pivot in sequence order.
    pub fn evaluate_points(&self, points: &[StateKey]) -> f64 {
        let mut chol = IncrementalCholesky::new(self.kernel, JITTER);
        points
            .iter()
            .map(|&p| 0.5 * chol.push(p).log2() + ENTROPY_OFFSET)
            .sum()
    }
}

/// Contribution `0.5 * log2(variance + JITTER) + ENTROPY_OFFSET` of a state
/// whose (posterior) variance is `variance`.
pub fn entropy_term(variance: f64) -> f64 {
    0.5 * (variance + JITTER).log2() + ENTROPY_OFFSET
}

impl SubmodularOracle for LogDetEntropyFunction {
    fn evaluate(&self, set: &StateSet) -> f64 {
        let points: Vec<StateKey> = set.iter().copied().collect();
        self.evaluate_points(&points)
    }
}

/// Outcome of [`check_monotone_submodular`].
#[derive(Debug, Clone, PartialEq)]
pub struct SubmodularityReport {
    pub tolerance: f64,
    pub empty_value: f64,
    pub monotone_violation: Option<MonotoneViolation>,
    pub submodular_violation: Option<DiminishingViolation>,
    pub inequalities_checked: usize,
}

impl SubmodularityReport {
    pub fn normalized(&self) -> bool {
        self.empty_value.abs() <= self.tolerance
    }

    pub fn passed(&self) -> bool {
        self.normalized()
            && self.monotone_violation.is_none()
            && self.submodular_violation.is_none()
    }
}

/// `gain(element | set) < -tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneViolation {
    pub set: StateSet,
    pub element: StateKey,
    pub gain: f64,
}

/// `gain(element | smaller) < gain(element | larger) - tolerance` with
/// `smaller` a subset of `larger`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiminishingViolation {
    pub smaller: StateSet,
    pub larger: StateSet,
    pub element: StateKey,
    pub gain_smaller: f64,
    pub gain_larger: f64,
}

pub const MAX_EXHAUSTIVE_GROUND_SET: usize = 12;

/// Checks normalization, monotonicity and diminishing returns over every
/// `A ⊆ B ⊆ V`, `v ∉ B`. All `2^|V|` values are evaluated once up front.
pub fn check_monotone_submodular<F: SubmodularOracle + ?Sized>(
    oracle: &F,
    ground: &StateSet,
    tolerance: f64,
) -> Result<SubmodularityReport> {
    let n = ground.len();
    if n > MAX_EXHAUSTIVE_GROUND_SET {
        return Err(Error::GroundSetTooLarge {
            size: n,
            max: MAX_EXHAUSTIVE_GROUND_SET,
        });
    }
    let elems: Vec<StateKey> = ground.iter().copied().collect();
    let to_set = |mask: usize| -> StateSet {
        (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| elems[i])
            .collect()
    };
    let values: Vec<f64> = (0..1usize << n)
        .map(|m| oracle.evaluate(&to_set(m)))
        .collect();
    let gain = |mask: usize, i: usize| values[mask | 1 << i] - values[mask];

    let mut report = SubmodularityReport {
        tolerance,
        empty_value: values[0],
        monotone_violation: None,
        submodular_violation: None,
        inequalities_checked: 0,
    };
    for big in 0..1usize << n {
        for i in (0..n).filter(|i| big >> i & 1 == 0) {
            let g_big = gain(big, i);
            report.inequalities_checked += 1;
            if g_big < -tolerance && report.monotone_violation.is_none() {
                report.monotone_violation = Some(MonotoneViolation {
                    set: to_set(big),
                    element: elems[i],
                    gain: g_big,
                });
            }
            if report.submodular_violation.is_some() {
                continue;
            }
            // Walk every submask of `big`, including `big` itself and 0.
            let mut small = big;
            loop {
                let g_small = gain(small, i);
                report.inequalities_checked += 1;
                if g_small < g_big - tolerance {
                    report.submodular_violation = Some(DiminishingViolation {
                        smaller: to_set(small),
                        larger: to_set(big),
                        element: elems[i],
                        gain_smaller: g_small,
                        gain_larger: g_big,
                    });
                    break;
                }
                if small == 0 {
                    break;
                }
                small = (small - 1) & big;
            }
        }
    }
    Ok(report)
}

/// Greedy selection in pick order, plus `F` of the selected set.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedySolution {
    pub order: Vec<StateKey>,
    pub value: f64,
}

impl GreedySolution {
    pub fn set(&self) -> StateSet {
        self.order.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    key: StateKey,
    round: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Larger gain first; among equal gains the smaller key wins.
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.key.cmp(&self.key))
    }
}

/// Lazy greedy maximization of `F` under `|S| <= k`.
///
/// Stale gains stay in a max-heap as upper bounds; only the top entry is
/// re-evaluated. Ties go to the smallest [`StateKey`], which makes the result
/// identical to plain greedy with the same rule.
pub fn greedy_max<F: SubmodularOracle + ?Sized>(
    oracle: &F,
    ground: &StateSet,
    k: usize,
) -> Result<GreedySolution> {
    if k == 0 || k > ground.len() {
        return Err(Error::CardinalityOutOfRange { k, n: ground.len() });
    }
    let mut selected = StateSet::new();
    let mut order = Vec::with_capacity(k);
    let mut heap: BinaryHeap<Candidate> = ground
        .iter()
        .map(|&key| Candidate {
            gain: oracle.gain(key, &selected),
            key,
            round: 0,
        })
        .collect();

    for round in 0..k {
        while let Some(top) = heap.pop() {
            if top.round == round {
                selected.insert(top.key);
                order.push(top.key);
                break;
            }
            heap.push(Candidate {
                gain: oracle.gain(top.key, &selected),
                key: top.key,
                round,
            });
        }
    }
    let value = oracle.evaluate(&selected);
    Ok(GreedySolution { order, value })
}
