//! Brute-force references used by the check suites and tests.
//!
//! Everything here trades speed for obviousness: subset enumeration for
//! cardinality-constrained maximization, plain greedy without a heap, and
//! full trajectory enumeration for the exact objective and its gradient on
//! small grids.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use crate::env::{GridEnv, StartDistribution, Trajectory, NUM_ACTIONS};
use crate::error::{invalid, Error, Result};
use crate::policy::PolicyParameters;
use crate::submodular::{CoverageFunction, GreedySolution, StateKey, StateSet, SubmodularOracle};
use crate::trainer::{estimate_gradient_with, EstimatorOptions};

/// Largest number of action sequences [`enumerate_trajectories`] will visit.
pub const MAX_ENUMERATED: usize = 1 << 20;

/// `|S|^2`, supermodular. Used to check that the property checker catches
/// violations.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredCardinality;

impl SubmodularOracle for SquaredCardinality {
    fn evaluate(&self, set: &StateSet) -> f64 {
        (set.len() * set.len()) as f64
    }
}

/// Best `F(S)` over all `|S| <= k`, ties to the lexicographically first
/// subset mask.
pub fn brute_force_max<F: SubmodularOracle + ?Sized>(
    oracle: &F,
    ground: &StateSet,
    k: usize,
) -> Result<(StateSet, f64)> {
    let n = ground.len();
    if k == 0 || k > n {
        return Err(Error::CardinalityOutOfRange { k, n });
    }
    if n > 24 {
        return Err(Error::GroundSetTooLarge { size: n, max: 24 });
    }
    let elems: Vec<StateKey> = ground.iter().copied().collect();
    let mut best = (StateSet::new(), f64::NEG_INFINITY);
    for mask in 0u32..1 << n {
        if mask.count_ones() as usize > k {
            continue;
        }
        let set: StateSet = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| elems[i])
            .collect();
        let v = oracle.evaluate(&set);
        if v > best.1 {
            best = (set, v);
        }
    }
    Ok(best)
}

/// Plain greedy: each round evaluates every remaining gain and takes the
/// largest, ties to the smallest key.
pub fn naive_greedy<F: SubmodularOracle + ?Sized>(
    oracle: &F,
    ground: &StateSet,
    k: usize,
) -> Result<GreedySolution> {
    if k == 0 || k > ground.len() {
        return Err(Error::CardinalityOutOfRange { k, n: ground.len() });
    }
    let mut selected = StateSet::new();
    let mut order = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(f64, StateKey)> = None;
        for &v in ground.iter().filter(|v| !selected.contains(v)) {
            let g = oracle.gain(v, &selected);
            if best.is_none_or(|(bg, _)| g > bg) {
                best = Some((g, v));
            }
        }
        let (_, v) = best.expect("k <= |V| leaves a candidate");
        selected.insert(v);
        order.push(v);
    }
    let value = oracle.evaluate(&selected);
    Ok(GreedySolution { order, value })
}

/// Random coverage instance over `n` cells in one row: each cell covers
/// `1..=max_patch` items drawn from `0..universe`.
pub fn random_coverage<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    universe: u64,
    max_patch: usize,
) -> (CoverageFunction, StateSet) {
    let mut patches = HashMap::new();
    let mut ground = StateSet::new();
    for i in 0..n {
        let s = StateKey::new(0, i as u32);
        let size = rng.gen_range(1..=max_patch);
        let patch: BTreeSet<u64> = (0..size).map(|_| rng.gen_range(0..universe)).collect();
        patches.insert(s, patch);
        ground.insert(s);
    }
    (CoverageFunction::new(patches), ground)
}

/// Every `(start, a_0..a_H-1)` with its probability
/// `rho(s_0) prod_h pi(a_h | s_h)`, in lexicographic action order.
pub fn enumerate_trajectories(
    env: &GridEnv,
    policy: &PolicyParameters,
) -> Result<Vec<(f64, Trajectory)>> {
    let spec = env.spec();
    let starts: Vec<(StateKey, f64)> = match spec.start {
        StartDistribution::Fixed(s) => vec![(s, 1.0)],
        StartDistribution::Uniform => {
            let p = 1.0 / spec.num_states() as f64;
            env.states().map(|s| (s, p)).collect()
        }
    };
    let per_start = (NUM_ACTIONS as u128).pow(spec.horizon as u32);
    if per_start * starts.len() as u128 > MAX_ENUMERATED as u128 {
        return Err(invalid(format!(
            "enumeration of {} starts x {NUM_ACTIONS}^{} action sequences is too large",
            starts.len(),
            spec.horizon
        )));
    }
    let mut out = Vec::with_capacity(per_start as usize * starts.len());
    for (s0, p0) in starts {
        let mut actions = Vec::with_capacity(spec.horizon);
        walk(env, policy, s0, p0, &mut actions, s0, &mut out)?;
    }
    Ok(out)
}

fn walk(
    env: &GridEnv,
    policy: &PolicyParameters,
    s0: StateKey,
    prob: f64,
    actions: &mut Vec<usize>,
    s: StateKey,
    out: &mut Vec<(f64, Trajectory)>,
) -> Result<()> {
    if actions.len() == env.spec().horizon {
        out.push((prob, env.replay(s0, actions)?));
        return Ok(());
    }
    let dist = policy.action_distribution(s)?;
    for a in 0..NUM_ACTIONS {
        actions.push(a);
        walk(
            env,
            policy,
            s0,
            prob * dist.probs[a],
            actions,
            env.step(s, a)?,
            out,
        )?;
        actions.pop();
    }
    Ok(())
}

/// `J(theta) = sum_tau f(tau) R(tau)`.
pub fn exact_objective(env: &GridEnv, policy: &PolicyParameters) -> Result<f64> {
    Ok(enumerate_trajectories(env, policy)?
        .iter()
        .map(|(p, t)| p * env.model().trajectory_reward(t))
        .sum())
}

/// `sum_tau f(tau) grad log f(tau) R(tau)`, with
/// `grad log f(tau) = sum_h grad log pi(a_h | s_h)`.
pub fn exact_gradient(env: &GridEnv, policy: &PolicyParameters) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; policy.len()];
    for (p, t) in enumerate_trajectories(env, policy)? {
        let weight = p * env.model().trajectory_reward(&t);
        for h in 0..t.horizon() {
            policy.accumulate_grad_log_prob(t.states[h], t.actions[h], weight, &mut grad)?;
        }
    }
    Ok(grad)
}

/// Exact expectation of the single-trajectory marginal-return estimator.
pub fn exact_estimator_expectation(
    env: &GridEnv,
    policy: &PolicyParameters,
    include_initial_reward: bool,
) -> Result<Vec<f64>> {
    let opts = EstimatorOptions {
        include_initial_reward,
        baseline: None,
    };
    let mut grad = vec![0.0; policy.len()];
    for (p, t) in enumerate_trajectories(env, policy)? {
        let est = estimate_gradient_with(policy, std::slice::from_ref(&t), None, opts)?;
        for (g, x) in grad.iter_mut().zip(&est.gradient) {
            *g += p * x;
        }
    }
    Ok(grad)
}

/// Central difference `(J(theta + eps d) - J(theta - eps d)) / (2 eps)`.
pub fn finite_difference_objective(
    env: &GridEnv,
    policy: &PolicyParameters,
    direction: &[f64],
    eps: f64,
) -> Result<f64> {
    if direction.len() != policy.len() {
        return Err(Error::DimensionMismatch {
            expected: policy.len(),
            actual: direction.len(),
        });
    }
    let shifted = |sign: f64| -> Result<f64> {
        let mut p = policy.clone();
        for (t, d) in p.theta_mut().iter_mut().zip(direction) {
            *t += sign * eps * d;
        }
        exact_objective(env, &p)
    };
    Ok((shifted(1.0)? - shifted(-1.0)?) / (2.0 * eps))
}
