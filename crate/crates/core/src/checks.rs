//! Self-check suites run by `sgpo check` and the acceptance harness.
//!
//! Each suite compares production code against a brute-force reference or a
//! closed-form value and reports a one-line verdict.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::{GridEnv, GridInstance, RewardMode, SmdpSpec, StartDistribution, NUM_ACTIONS};
use crate::error::{invalid, Error, Result};
use crate::gp::{SquaredExponential, JITTER};
use crate::oracle::{
    brute_force_max, exact_estimator_expectation, exact_gradient, finite_difference_objective,
    naive_greedy, random_coverage, SquaredCardinality,
};
use crate::policy::{Layout, PolicyParameters};
use crate::rng;
use crate::sparsifier::{sparsify, SparsifyConfig};
use crate::submodular::{
    check_monotone_submodular, entropy_term, greedy_max, LogDetEntropyFunction, StateKey, StateSet,
    SubmodularOracle, WeightedNodeFunction, ENTROPY_OFFSET, ROUNDED_ENTROPY_OFFSET,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Submodularity,
    Greedy,
    Telescoping,
    Gradient,
    Sparsifier,
    EntropyConstant,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Submodularity,
        Suite::Greedy,
        Suite::Telescoping,
        Suite::Gradient,
        Suite::Sparsifier,
        Suite::EntropyConstant,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Submodularity => "submodularity",
            Suite::Greedy => "greedy",
            Suite::Telescoping => "telescoping",
            Suite::Gradient => "gradient",
            Suite::Sparsifier => "sparsifier",
            Suite::EntropyConstant => "entropy-constant",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| invalid(format!("unknown suite '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Grid side for the gradient suite.
    pub grid: u32,
    /// Horizon for the gradient suite.
    pub horizon: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            grid: 3,
            horizon: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.suite, self.detail)
    }
}

pub fn run_suite(suite: Suite, opts: &CheckOptions) -> Result<SuiteReport> {
    let (passed, detail) = match suite {
        Suite::Submodularity => submodularity(opts.seed)?,
        Suite::Greedy => greedy(opts.seed, 200)?,
        Suite::Telescoping => telescoping(opts.seed, 1000)?,
        Suite::Gradient => gradient(opts)?,
        Suite::Sparsifier => sparsifier(opts.seed)?,
        Suite::EntropyConstant => entropy_constant(),
    };
    Ok(SuiteReport {
        suite,
        passed,
        detail,
    })
}

/// `n` distinct cells laid out row-major on a square grid just large enough
/// to hold them.
pub fn synthetic_ground(n: usize) -> StateSet {
    let side = ((n as f64).sqrt().ceil() as usize).max(1);
    (0..n)
        .map(|i| StateKey::new((i / side) as u32, (i % side) as u32))
        .collect()
}

/// Modular function with weights uniform in `(0, 1]` on `ground`.
pub fn random_modular(ground: &StateSet, seed: u64) -> Result<WeightedNodeFunction> {
    let mut rng = rng::stream(seed, rng::ENV_INSTANCE, &[ground.len() as u64]);
    WeightedNodeFunction::new(
        ground
            .iter()
            .map(|&s| (s, 1.0 - rng.gen::<f64>()))
            .collect(),
    )
}

const SUBMODULARITY_TOLERANCE: f64 = 1e-9;

fn submodularity(seed: u64) -> Result<(bool, String)> {
    let mut rng = rng::stream(seed, "check-submodularity", &[]);
    let cells: Vec<StateKey> = (0..36).map(|i| StateKey::new(i / 6, i % 6)).collect();
    let entropy = LogDetEntropyFunction::new(SquaredExponential::default());
    let mut checked = 0usize;
    let mut failures = Vec::new();
    for n in 1..=10 {
        for rep in 0..3 {
            let (coverage, cov_ground) = random_coverage(&mut rng, n, 16, 5);
            let ground: StateSet = cells.choose_multiple(&mut rng, n).copied().collect();
            let modular = random_modular(&ground, seed ^ (n as u64 * 31 + rep))?;
            let cases: [(&str, &dyn SubmodularOracle, &StateSet); 3] = [
                ("coverage", &coverage, &cov_ground),
                ("weighted", &modular, &ground),
                ("logdet", &entropy, &ground),
            ];
            for (name, f, g) in cases {
                let report = check_monotone_submodular(f, g, SUBMODULARITY_TOLERANCE)?;
                checked += 1;
                if !report.passed() {
                    failures.push(format!("{name} |V|={n}"));
                }
            }
        }
    }
    let ground: StateSet = (0..4).map(|c| StateKey::new(0, c)).collect();
    let double = check_monotone_submodular(&SquaredCardinality, &ground, SUBMODULARITY_TOLERANCE)?;
    let witness = double.submodular_violation.map(|w| {
        format!(
            "gain {} on {} elements vs {} on {}",
            w.gain_smaller,
            w.smaller.len(),
            w.gain_larger,
            w.larger.len()
        )
    });
    let passed = failures.is_empty() && witness.is_some();
    let detail = match (&witness, failures.is_empty()) {
        (Some(w), true) => format!("{checked} ground sets pass; |S|^2 double rejected ({w})"),
        (None, _) => "|S|^2 double was not rejected".to_string(),
        (_, false) => format!("violations: {}", failures.join(", ")),
    };
    Ok((passed, detail))
}

/// Lazy greedy against brute force and plain greedy on random coverage
/// instances.
pub fn greedy(seed: u64, instances: usize) -> Result<(bool, String)> {
    let bound = 1.0 - (-1.0f64).exp();
    let mut worst_ratio = f64::INFINITY;
    let mut mismatches = 0;
    let mut below = 0;
    for i in 0..instances {
        let mut rng = rng::stream(seed, "check-greedy", &[i as u64]);
        let n = rng.gen_range(4..=12);
        let k = rng.gen_range(1..=4);
        let (f, ground) = random_coverage(&mut rng, n, 20, 6);
        let (_, opt) = brute_force_max(&f, &ground, k)?;
        let lazy = greedy_max(&f, &ground, k)?;
        let naive = naive_greedy(&f, &ground, k)?;
        if lazy != naive {
            mismatches += 1;
        }
        if lazy.value < bound * opt {
            below += 1;
        }
        worst_ratio = worst_ratio.min(lazy.value / opt);
    }
    Ok((
        mismatches == 0 && below == 0,
        format!(
            "{instances} instances, worst greedy/opt = {worst_ratio:.4} (bound {bound:.4}), \
             {below} below bound, {mismatches} lazy/plain mismatches"
        ),
    ))
}

/// Sum of prefix marginals against the directly evaluated reward on random
/// trajectories for every reward mode.
pub fn telescoping(seed: u64, per_mode: usize) -> Result<(bool, String)> {
    let instance = GridInstance::generate(10, seed)?;
    let mut worst = 0.0f64;
    let modes = RewardMode::all();
    for (m, mode) in modes.iter().enumerate() {
        let spec = SmdpSpec {
            mode: *mode,
            start: StartDistribution::Uniform,
            ..SmdpSpec::default()
        };
        let env = GridEnv::new(spec, &instance)?;
        for t in 0..per_mode {
            let mut rng = rng::stream(seed, "check-telescoping", &[m as u64, t as u64]);
            let start = env.reset(&mut rng);
            let h = rng.gen_range(0..=spec.horizon);
            let actions: Vec<usize> = (0..h).map(|_| rng.gen_range(0..NUM_ACTIONS)).collect();
            let traj = env.replay(start, &actions)?;
            let direct = env.model().trajectory_reward(&traj);
            let summed: f64 = env.model().prefix_marginals(&traj).iter().sum();
            worst = worst
                .max((summed - direct).abs())
                .max((traj.reward() - direct).abs());
        }
    }
    Ok((
        worst <= 1e-9,
        format!(
            "{} trajectories x {} modes, max |sum marginals - R| = {worst:.3e}",
            per_mode,
            modes.len()
        ),
    ))
}

/// Result of comparing the estimator with the enumerated gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientComparison {
    pub trajectories: usize,
    pub max_estimator_error: f64,
    pub max_baseline_shift: f64,
    pub max_fd_relative_error: f64,
}

impl GradientComparison {
    pub fn passed(&self) -> bool {
        self.max_estimator_error <= 1e-9
            && self.max_baseline_shift <= 1e-9
            && self.max_fd_relative_error <= 1e-4
    }
}

/// Exact comparison on a `grid x grid` tabular problem with the set-valued
/// node-weight reward.
pub fn compare_gradients(grid: u32, horizon: usize, seed: u64) -> Result<GradientComparison> {
    let spec = SmdpSpec {
        grid_size: grid,
        horizon,
        mode: RewardMode::GraphSrl { additive: false },
        ..SmdpSpec::default()
    };
    let env = GridEnv::new(spec, &GridInstance::generate(grid, seed)?)?;
    let mut rng = rng::stream(seed, "check-gradient", &[]);
    let mut policy = PolicyParameters::zeros(Layout::Tabular { grid_size: grid })?;
    for t in policy.theta_mut() {
        *t = rng.gen_range(-1.0..1.0);
    }
    let trajectories = crate::oracle::enumerate_trajectories(&env, &policy)?.len();
    let reference = exact_gradient(&env, &policy)?;
    let expected = exact_estimator_expectation(&env, &policy, true)?;
    let unshifted = exact_estimator_expectation(&env, &policy, false)?;
    let max_diff = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };

    let mut max_fd_relative_error = 0.0f64;
    for _ in 0..5 {
        let dir: Vec<f64> = (0..policy.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let projected: f64 = expected.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let fd = finite_difference_objective(&env, &policy, &dir, 1e-5)?;
        let scale = projected.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        max_fd_relative_error = max_fd_relative_error.max((projected - fd).abs() / scale);
    }
    Ok(GradientComparison {
        trajectories,
        max_estimator_error: max_diff(&expected, &reference),
        max_baseline_shift: max_diff(&expected, &unshifted),
        max_fd_relative_error,
    })
}

fn gradient(opts: &CheckOptions) -> Result<(bool, String)> {
    let c = compare_gradients(opts.grid, opts.horizon, opts.seed)?;
    Ok((
        c.passed(),
        format!(
            "{}x{} grid, H={}, {} trajectories: |E[g] - grad J| = {:.3e}, R(s0) shift = {:.3e}, \
             finite-difference rel. error = {:.3e}",
            opts.grid,
            opts.grid,
            opts.horizon,
            c.trajectories,
            c.max_estimator_error,
            c.max_baseline_shift,
            c.max_fd_relative_error
        ),
    ))
}

/// Outcome of sparsifying a synthetic modular ground set.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsifierRun {
    pub n0: usize,
    pub iterations: usize,
    pub kept: usize,
    pub iteration_bound: usize,
    pub kept_bound: usize,
    /// Every pass removed `floor((1 - 1/sqrt c) |rest|)` of the non-sampled
    /// remainder.
    pub prune_counts_match: bool,
}

impl SparsifierRun {
    pub fn within_bounds(&self) -> bool {
        self.iterations <= self.iteration_bound
            && self.kept >= self.kept_bound
            && self.prune_counts_match
    }
}

pub fn sparsifier_run(n0: usize, cfg: &SparsifyConfig) -> Result<SparsifierRun> {
    let ground = synthetic_ground(n0);
    let f = random_modular(&ground, cfg.seed)?;
    let result = sparsify(&f, &ground, cfg)?;

    let batch = cfg.sample_size(n0);
    let mut remaining = n0;
    let mut prune_counts_match = result.removed_per_iteration.len() == result.iterations;
    for &removed in &result.removed_per_iteration {
        remaining -= batch.min(remaining);
        let expected = cfg.removal_count(remaining);
        prune_counts_match &= removed == expected;
        remaining -= expected.min(remaining);
    }
    prune_counts_match &=
        result.kept.len() == n0 - result.removed_per_iteration.iter().sum::<usize>();
    Ok(SparsifierRun {
        n0,
        iterations: result.iterations,
        kept: result.kept.len(),
        iteration_bound: (n0 as f64).log2().ceil() as usize,
        kept_bound: (cfg.r() * (n0 as f64).ln()).ceil() as usize,
        prune_counts_match,
    })
}

fn sparsifier(seed: u64) -> Result<(bool, String)> {
    let trace = sparsifier_run(100, &SparsifyConfig::new(8.0, 8.0, 7)?)?;
    let trace_ok = trace.iterations == 1 && trace.kept == 60;
    let mut parts = vec![format!(
        "n0=100 seed 7: kept {} in {} iteration(s)",
        trace.kept, trace.iterations
    )];
    let mut ok = trace_ok;
    for n0 in [50, 100, 1000, 10_000] {
        let run = sparsifier_run(n0, &SparsifyConfig::new(8.0, 8.0, seed)?)?;
        ok &= run.within_bounds();
        parts.push(format!(
            "n0={n0}: {} iter (<= {}), kept {} (>= {})",
            run.iterations, run.iteration_bound, run.kept, run.kept_bound
        ));
    }
    let frac = SparsifyConfig::default().prune_fraction();
    parts.push(format!("prune fraction {frac:.4}"));
    Ok((ok, parts.join("; ")))
}

fn entropy_constant() -> (bool, String) {
    let derived = -0.5 * JITTER.log2();
    let six_decimals = (derived - ROUNDED_ENTROPY_OFFSET).abs() < 5e-7;
    let zero = entropy_term(0.0);
    (
        six_decimals && derived == ENTROPY_OFFSET && zero.abs() < 1e-12,
        format!("-0.5 log2(1e-6) = {derived:.6}, zero-variance contribution = {zero:e}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn synthetic_ground_has_requested_size() {
        for n in [1, 7, 100, 1000] {
            assert_eq!(synthetic_ground(n).len(), n);
        }
    }

    #[test]
    fn sparsifier_trace_at_100() {
        let run = sparsifier_run(100, &SparsifyConfig::new(8.0, 8.0, 7).unwrap()).unwrap();
        assert_eq!((run.iterations, run.kept), (1, 60));
        assert!(run.within_bounds());
    }

    #[test]
    fn cheap_suites_pass() {
        let opts = CheckOptions::default();
        for suite in [Suite::EntropyConstant, Suite::Gradient] {
            let report = run_suite(suite, &opts).unwrap();
            assert!(report.passed, "{report}");
        }
        let (ok, detail) = greedy(3, 20).unwrap();
        assert!(ok, "{detail}");
        let (ok, detail) = telescoping(3, 20).unwrap();
        assert!(ok, "{detail}");
    }
}
