//! Policy-gradient training with marginal-gain returns.
//!
//! One epoch: sample `B` rollouts with the current policy, optionally prune
//! each episode's state set with the sparsifier (SGPO), estimate the gradient
//! from the surviving steps, take an ascent step, then fit the critic used
//! for logging.
//!
//! Rollouts and sparsification run in parallel, each on its own random
//! stream keyed by `(seed, epoch, rollout)`. Per-rollout gradients are summed
//! in rollout order, so results do not depend on thread scheduling.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::env::{GridEnv, GridInstance, SmdpSpec, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::metrics::EpochMetrics;
use crate::policy::{CriticParameters, Layout, PolicyParameters, DEFAULT_HIDDEN};
use crate::rng;
use crate::sparsifier::{sparsify, SparsifyConfig};
use crate::submodular::{StateKey, StateSet};

pub const DEFAULT_CRITIC_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_ROLLOUTS: usize = 8;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Policy backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Tabular,
    Mlp { hidden: usize },
}

impl PolicyKind {
    pub fn layout(&self, grid_size: u32) -> Layout {
        match *self {
            PolicyKind::Tabular => Layout::Tabular { grid_size },
            PolicyKind::Mlp { hidden } => Layout::Mlp { grid_size, hidden },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Tabular => "tabular",
            PolicyKind::Mlp { .. } => "mlp",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(PolicyKind::Tabular),
            "mlp" => Ok(PolicyKind::Mlp {
                hidden: DEFAULT_HIDDEN,
            }),
            other => Err(invalid(format!(
                "unknown policy '{other}' (expected tabular or mlp)"
            ))),
        }
    }
}

/// SubPO trains on every step; SGPO only on steps whose state survives
/// sparsification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    Subpo,
    Sgpo(SparsifyConfig),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Subpo => "subpo",
            Algorithm::Sgpo(_) => "sgpo",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Step size of the ascent update.
    pub alpha: f64,
    pub rollouts: usize,
    pub seed: u64,
    pub env: SmdpSpec,
    pub policy: PolicyKind,
    pub algorithm: Algorithm,
    pub critic_learning_rate: f64,
    /// Weight score terms by `G_i - V(s_i)` instead of `G_i`.
    pub advantage_weighted: bool,
    pub record_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            alpha: DEFAULT_ALPHA,
            rollouts: DEFAULT_ROLLOUTS,
            seed: 0,
            env: SmdpSpec::default(),
            policy: PolicyKind::Tabular,
            algorithm: Algorithm::Sgpo(SparsifyConfig::default()),
            critic_learning_rate: DEFAULT_CRITIC_LEARNING_RATE,
            advantage_weighted: false,
            record_wallclock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be >= 1"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(invalid("alpha must be > 0"));
        }
        if self.rollouts == 0 {
            return Err(invalid("rollouts must be >= 1"));
        }
        if !(self.critic_learning_rate.is_finite() && self.critic_learning_rate > 0.0) {
            return Err(invalid("critic learning rate must be > 0"));
        }
        if let PolicyKind::Mlp { hidden: 0 } = self.policy {
            return Err(invalid("hidden width must be >= 1"));
        }
        self.env.validate()
    }
}

/// Samples one episode of `H` actions from `policy`.
pub fn rollout<R: Rng + ?Sized>(
    env: &GridEnv,
    policy: &PolicyParameters,
    rng: &mut R,
) -> Result<Trajectory> {
    let horizon = env.spec().horizon;
    let mut s = env.reset(rng);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    states.push(s);
    for _ in 0..horizon {
        let a = policy.action_distribution(s)?.sample(rng);
        s = env.step(s, a)?;
        actions.push(a);
        states.push(s);
    }
    Trajectory::record(env.model(), states, actions)
}

/// `G_i = sum_{j=i}^{H-1} R(s_j+1 | tau_0:j) + R(s_0)` for `i = 0..H`, the
/// last term dropped when `include_initial_reward` is false.
pub fn returns_to_go(traj: &Trajectory, include_initial_reward: bool) -> Vec<f64> {
    let h = traj.horizon();
    let base = if include_initial_reward {
        traj.marginals[0]
    } else {
        0.0
    };
    let mut suffix = vec![0.0; h];
    let mut acc = 0.0;
    for i in (0..h).rev() {
        acc += traj.marginals[i + 1];
        suffix[i] = acc;
    }
    suffix.into_iter().map(|g| g + base).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct EstimatorOptions<'a> {
    pub include_initial_reward: bool,
    /// Subtracted from each `G_i` when present.
    pub baseline: Option<&'a CriticParameters>,
}

impl Default for EstimatorOptions<'_> {
    fn default() -> Self {
        Self {
            include_initial_reward: true,
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    /// `returns[b][i] = G_i` of trajectory `b`.
    pub returns: Vec<Vec<f64>>,
}

/// Steps of `traj` that carry a gradient term.
pub fn active_steps<'t>(
    traj: &'t Trajectory,
    kept: Option<&'t StateSet>,
) -> impl Iterator<Item = usize> + 't {
    (0..traj.horizon()).filter(move |&i| kept.is_none_or(|k| k.contains(&traj.states[i])))
}

/// `(1/B) sum_b sum_{i in I_b} grad log pi(a_i | s_i) G_i`, where `I_b` is
/// every step, or with `kept` only the steps whose state is in `kept[b]`.
pub fn estimate_gradient(
    policy: &PolicyParameters,
    trajectories: &[Trajectory],
    kept: Option<&[StateSet]>,
) -> Result<GradientEstimate> {
    estimate_gradient_with(policy, trajectories, kept, EstimatorOptions::default())
}

pub fn estimate_gradient_with(
    policy: &PolicyParameters,
    trajectories: &[Trajectory],
    kept: Option<&[StateSet]>,
    opts: EstimatorOptions<'_>,
) -> Result<GradientEstimate> {
    if trajectories.is_empty() {
        return Err(Error::NoTrajectories);
    }
    if let Some(k) = kept {
        if k.len() != trajectories.len() {
            return Err(Error::DimensionMismatch {
                expected: trajectories.len(),
                actual: k.len(),
            });
        }
    }
    let per_traj: Vec<(Vec<f64>, Vec<f64>)> = trajectories
        .par_iter()
        .enumerate()
        .map(|(b, traj)| {
            let returns = returns_to_go(traj, opts.include_initial_reward);
            let mut g = vec![0.0; policy.len()];
            for i in active_steps(traj, kept.map(|k| &k[b])) {
                let s = traj.states[i];
                let weight = match opts.baseline {
                    Some(critic) => returns[i] - critic.value(s)?,
                    None => returns[i],
                };
                policy.accumulate_grad_log_prob(s, traj.actions[i], weight, &mut g)?;
            }
            Ok((g, returns))
        })
        .collect::<Result<_>>()?;

    let mut gradient = vec![0.0; policy.len()];
    let mut returns = Vec::with_capacity(per_traj.len());
    for (g, r) in per_traj {
        for (acc, x) in gradient.iter_mut().zip(&g) {
            *acc += x;
        }
        returns.push(r);
    }
    let b = trajectories.len() as f64;
    for x in &mut gradient {
        *x /= b;
    }
    if gradient.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gradient estimate"));
    }
    Ok(GradientEstimate { gradient, returns })
}

/// `theta <- theta + alpha g`, the maximizer of
/// `d . g - |d|^2 / (2 alpha)` over unconstrained steps `d`.
pub fn apply_update(theta: &mut [f64], gradient: &[f64], alpha: f64) -> Result<()> {
    if theta.len() != gradient.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            actual: gradient.len(),
        });
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite("step size"));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    for (t, g) in theta.iter_mut().zip(gradient) {
        *t += alpha * g;
    }
    Ok(())
}

/// `-(1/H) sum_{i in I} log pi(a_i | s_i) G_i`, the negated surrogate whose
/// gradient is the single-trajectory estimator.
pub fn policy_loss(
    policy: &PolicyParameters,
    traj: &Trajectory,
    returns: &[f64],
    kept: Option<&StateSet>,
) -> Result<f64> {
    let h = traj.horizon();
    if h == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in active_steps(traj, kept) {
        total += policy.log_prob(traj.states[i], traj.actions[i])? * returns[i];
    }
    Ok(-total / h as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParameters,
    pub critic: CriticParameters,
    pub metrics: Vec<EpochMetrics>,
}

/// Runs `cfg.epochs` epochs on `instance`.
pub fn train(cfg: &TrainConfig, instance: &GridInstance) -> Result<TrainOutcome> {
    train_with_observer(cfg, instance, |_| {})
}

/// [`train`], calling `observe` after every epoch.
pub fn train_with_observer(
    cfg: &TrainConfig,
    instance: &GridInstance,
    mut observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env = GridEnv::new(cfg.env, instance)?;
    let layout = cfg.policy.layout(cfg.env.grid_size);
    let mut policy = PolicyParameters::init(layout, &mut rng::stream(cfg.seed, rng::INIT, &[0]))?;
    let mut critic = CriticParameters::init(layout, &mut rng::stream(cfg.seed, rng::INIT, &[1]))?;
    let started = Instant::now();
    let mut steps = 0u64;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        let trajectories: Vec<Trajectory> = (0..cfg.rollouts)
            .into_par_iter()
            .map(|b| {
                rollout(
                    &env,
                    &policy,
                    &mut rng::stream(cfg.seed, rng::ROLLOUT, &[e, b as u64]),
                )
            })
            .collect::<Result<_>>()?;

        let kept: Option<Vec<StateSet>> = match cfg.algorithm {
            Algorithm::Subpo => None,
            Algorithm::Sgpo(sp) => Some(
                trajectories
                    .par_iter()
                    .enumerate()
                    .map(|(b, traj)| {
                        let ground = traj.acting_states();
                        if ground.is_empty() {
                            return Ok(ground);
                        }
                        let sp = sp.with_seed(rng::stream_seed(
                            cfg.seed,
                            rng::SPARSIFIER,
                            &[e, b as u64],
                        ));
                        Ok(sparsify(env.model().oracle(), &ground, &sp)?.kept)
                    })
                    .collect::<Result<_>>()?,
            ),
        };

        let opts = EstimatorOptions {
            include_initial_reward: true,
            baseline: cfg.advantage_weighted.then_some(&critic),
        };
        let estimate = estimate_gradient_with(&policy, &trajectories, kept.as_deref(), opts)?;

        let b = trajectories.len() as f64;
        let objective = trajectories.iter().map(|t| t.reward()).sum::<f64>() / b;
        if !objective.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        let mut loss = 0.0;
        for (i, traj) in trajectories.iter().enumerate() {
            loss += policy_loss(
                &policy,
                traj,
                &estimate.returns[i],
                kept.as_ref().map(|k| &k[i]),
            )?;
        }
        let targets: Vec<(StateKey, f64)> = trajectories
            .iter()
            .zip(&estimate.returns)
            .flat_map(|(t, r)| t.states.iter().copied().zip(r.iter().copied()))
            .collect();
        let mut advantage = 0.0;
        for &(s, g) in &targets {
            advantage += g - critic.value(s)?;
        }
        let advantage_mean = if targets.is_empty() {
            0.0
        } else {
            advantage / targets.len() as f64
        };
        let coverage = trajectories
            .iter()
            .map(|t| t.distinct_states().len() as f64)
            .sum::<f64>()
            / b;
        let kept_states = match &kept {
            Some(k) => k.iter().map(|s| s.len() as f64).sum::<f64>() / b,
            None => {
                trajectories
                    .iter()
                    .map(|t| t.acting_states().len() as f64)
                    .sum::<f64>()
                    / b
            }
        };
        steps += trajectories.iter().map(|t| t.horizon() as u64).sum::<u64>();

        apply_update(policy.theta_mut(), &estimate.gradient, cfg.alpha)?;
        let critic_loss = critic.fit(&targets, cfg.critic_learning_rate)?;

        let row = EpochMetrics {
            epoch,
            objective,
            policy_loss: loss / b,
            critic_loss,
            advantage_mean,
            steps,
            coverage,
            kept_states,
            wallclock_ms: if cfg.record_wallclock {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        if !row.is_finite() {
            return Err(Error::NonFinite("epoch metrics"));
        }
        observe(&row);
        metrics.push(row);
    }
    Ok(TrainOutcome {
        policy,
        critic,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RewardMode;

    fn small_cfg(algorithm: Algorithm) -> (TrainConfig, GridInstance) {
        let cfg = TrainConfig {
            epochs: 5,
            rollouts: 4,
            seed: 11,
            env: SmdpSpec {
                grid_size: 4,
                horizon: 6,
                ..SmdpSpec::default()
            },
            algorithm,
            ..TrainConfig::default()
        };
        let inst = GridInstance::generate(4, 11).unwrap();
        (cfg, inst)
    }

    #[test]
    fn rollout_lengths_and_determinism() {
        let spec = SmdpSpec {
            grid_size: 5,
            horizon: 3,
            ..SmdpSpec::default()
        };
        let env = GridEnv::new(spec, &GridInstance::generate(5, 1).unwrap()).unwrap();
        let policy = PolicyParameters::zeros(Layout::Tabular { grid_size: 5 }).unwrap();
        let a = rollout(&env, &policy, &mut rng::stream(1, rng::ROLLOUT, &[0])).unwrap();
        let b = rollout(&env, &policy, &mut rng::stream(1, rng::ROLLOUT, &[0])).unwrap();
        assert_eq!(a.actions.len(), 3);
        assert_eq!(a.states.len(), 4);
        assert_eq!(a, b);
        assert!((a.prefix_rewards[3] - env.model().trajectory_reward(&a)).abs() < 1e-12);
    }

    #[test]
    fn returns_to_go_follow_definition() {
        let spec = SmdpSpec {
            grid_size: 3,
            horizon: 3,
            ..SmdpSpec::default()
        };
        let env = GridEnv::new(spec, &GridInstance::generate(3, 2).unwrap()).unwrap();
        let t = env.replay(StateKey::new(0, 0), &[3, 1, 3]).unwrap();
        let m = &t.marginals;
        let g = returns_to_go(&t, true);
        assert_eq!(g.len(), 3);
        assert!((g[0] - (m[1] + m[2] + m[3] + m[0])).abs() < 1e-15);
        assert!((g[2] - (m[3] + m[0])).abs() < 1e-15);
        let g0 = returns_to_go(&t, false);
        assert!((g0[1] - (m[2] + m[3])).abs() < 1e-15);
    }

    #[test]
    fn update_examples() {
        let mut theta = vec![0.0, 0.0];
        apply_update(&mut theta, &[1.0, -2.0], 0.1).unwrap();
        assert!((theta[0] - 0.1).abs() < 1e-15 && (theta[1] + 0.2).abs() < 1e-15);
        let before = theta.clone();
        apply_update(&mut theta, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(theta, before);
        let (mut a, mut b) = (vec![0.3, 0.7], vec![0.3, 0.7]);
        apply_update(&mut a, &[2.0, -1.0], 0.25).unwrap();
        apply_update(&mut b, &[1.0, -0.5], 0.5).unwrap();
        assert_eq!(a, b);
        assert!(apply_update(&mut a, &[f64::NAN, 0.0], 0.1).is_err());
        assert!(apply_update(&mut a, &[1.0], 0.1).is_err());
    }

    #[test]
    fn empty_trajectory_set_rejected() {
        let policy = PolicyParameters::zeros(Layout::Tabular { grid_size: 2 }).unwrap();
        assert!(matches!(
            estimate_gradient(&policy, &[], None),
            Err(Error::NoTrajectories)
        ));
    }

    #[test]
    fn kept_all_equals_unfiltered() {
        let (cfg, inst) = small_cfg(Algorithm::Subpo);
        let env = GridEnv::new(cfg.env, &inst).unwrap();
        let mut policy = PolicyParameters::zeros(Layout::Tabular { grid_size: 4 }).unwrap();
        for (i, t) in policy.theta_mut().iter_mut().enumerate() {
            *t = ((i * 7) % 5) as f64 * 0.1;
        }
        let trajs: Vec<_> = (0..4)
            .map(|b| rollout(&env, &policy, &mut rng::stream(3, rng::ROLLOUT, &[b])).unwrap())
            .collect();
        let all: Vec<StateSet> = trajs.iter().map(|t| t.distinct_states()).collect();
        let plain = estimate_gradient(&policy, &trajs, None).unwrap();
        let filtered = estimate_gradient(&policy, &trajs, Some(&all)).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&plain.gradient), bits(&filtered.gradient));
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        for mode in RewardMode::all() {
            let (mut cfg, inst) =
                small_cfg(Algorithm::Sgpo(SparsifyConfig::new(1.0, 8.0, 0).unwrap()));
            cfg.env.mode = mode;
            let a = train(&cfg, &inst).unwrap();
            let b = train(&cfg, &inst).unwrap();
            assert_eq!(a.metrics, b.metrics);
            assert_eq!(a.policy, b.policy);
            assert_eq!(a.metrics.len(), 5);
            for m in &a.metrics {
                assert!(m.is_finite());
                assert!(m.kept_states <= m.coverage);
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                alpha: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                rollouts: 0,
                ..TrainConfig::default()
            },
        ];
        for cfg in &bad {
            assert!(cfg.validate().is_err());
        }
        assert!(TrainConfig::default().validate().is_ok());
    }
}
