//! Gridworld SMDPs with submodular trajectory rewards.
//!
//! States are cells of a `g x g` grid, five actions move up/down/left/right
//! or stay, moves off the grid leave the agent in place, and an episode lasts
//! `H` actions (so `H + 1` states). The reward of a trajectory depends on the
//! whole visit history through one of four [`RewardMode`]s.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::gp::{posterior_variance, SquaredExponential, JITTER};
use crate::rng;
use crate::submodular::{
    entropy_term, LogDetEntropyFunction, StateKey, StateSet, SubmodularOracle,
    WeightedNodeFunction, ENTROPY_OFFSET,
};

pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::InvalidAction(i))
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Initial-state distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartDistribution {
    Fixed(StateKey),
    Uniform,
}

/// Which trajectory reward an environment pays out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardMode {
    /// Weight of distinct visited cells minus `lambda` per excess revisit.
    GraphM { lambda: f64 },
    /// Weight of distinct visited cells. With `additive`, every visit pays.
    GraphSrl { additive: bool },
    /// `0.5 log2 det(K_tau + 1e-6 I) + offset * |tau|` over all visits.
    EntropyM,
    /// Per-visit `0.5 log2(var + 1e-6) + offset`, where `var` is the posterior
    /// variance of the cell given all earlier visits.
    EntropySrl,
}

pub const DEFAULT_LAMBDA: f64 = 0.1;

impl RewardMode {
    pub fn name(&self) -> &'static str {
        match self {
            RewardMode::GraphM { .. } => "graph-m",
            RewardMode::GraphSrl { .. } => "graph-srl",
            RewardMode::EntropyM => "entropy-m",
            RewardMode::EntropySrl => "entropy-srl",
        }
    }

    pub fn is_graph(&self) -> bool {
        matches!(
            self,
            RewardMode::GraphM { .. } | RewardMode::GraphSrl { .. }
        )
    }

    /// The four modes with default parameters.
    pub fn all() -> [RewardMode; 4] {
        [
            RewardMode::GraphM {
                lambda: DEFAULT_LAMBDA,
            },
            RewardMode::GraphSrl { additive: false },
            RewardMode::EntropyM,
            RewardMode::EntropySrl,
        ]
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph-m" => Ok(RewardMode::GraphM {
                lambda: DEFAULT_LAMBDA,
            }),
            "graph-srl" => Ok(RewardMode::GraphSrl { additive: false }),
            "entropy-m" => Ok(RewardMode::EntropyM),
            "entropy-srl" => Ok(RewardMode::EntropySrl),
            other => Err(invalid(format!("unknown reward mode '{other}'"))),
        }
    }
}

/// Node weights for a grid, replayable from a text file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridInstance {
    grid_size: u32,
    seed: u64,
    weights: Vec<f64>,
}

impl GridInstance {
    /// Draws i.i.d. weights in `(0, 1]` from the instance stream of `seed`.
    pub fn generate(grid_size: u32, seed: u64) -> Result<Self> {
        if grid_size == 0 {
            return Err(invalid("grid size must be >= 1"));
        }
        let mut rng = rng::stream(seed, rng::ENV_INSTANCE, &[]);
        let n = (grid_size * grid_size) as usize;
        let weights = (0..n).map(|_| 1.0 - rng.gen::<f64>()).collect();
        Ok(Self {
            grid_size,
            seed,
            weights,
        })
    }

    pub fn from_weights(grid_size: u32, seed: u64, weights: Vec<f64>) -> Result<Self> {
        if grid_size == 0 {
            return Err(invalid("grid size must be >= 1"));
        }
        let n = (grid_size * grid_size) as usize;
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("instance weights must be finite and >= 0"));
        }
        Ok(Self {
            grid_size,
            seed,
            weights,
        })
    }

    pub fn grid_size(&self) -> u32 {
        self.grid_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weight(&self, s: StateKey) -> f64 {
        self.weights[(s.row * self.grid_size + s.col) as usize]
    }

    pub fn node_function(&self) -> WeightedNodeFunction {
        let g = self.grid_size;
        let weights = (0..g)
            .flat_map(|r| (0..g).map(move |c| StateKey::new(r, c)))
            .map(|s| (s, self.weight(s)))
            .collect();
        WeightedNodeFunction::new(weights).expect("instance weights validated on construction")
    }

    /// Writes `grid_size`, `seed` and one `row col weight` line per cell.
    /// Weights use the shortest representation that parses back exactly.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# sgpo grid instance v1")?;
        writeln!(out, "grid_size {}", self.grid_size)?;
        writeln!(out, "seed {}", self.seed)?;
        for r in 0..self.grid_size {
            for c in 0..self.grid_size {
                writeln!(out, "{r} {c} {}", self.weight(StateKey::new(r, c)))?;
            }
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut grid_size = None;
        let mut seed = None;
        let mut cells: BTreeMap<StateKey, f64> = BTreeMap::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["grid_size", v] => {
                    grid_size = Some(v.parse::<u32>().map_err(|e| err(e.to_string()))?)
                }
                ["seed", v] => seed = Some(v.parse::<u64>().map_err(|e| err(e.to_string()))?),
                [r, c, w] => {
                    let r = r.parse::<u32>().map_err(|e| err(e.to_string()))?;
                    let c = c.parse::<u32>().map_err(|e| err(e.to_string()))?;
                    let w = w.parse::<f64>().map_err(|e| err(e.to_string()))?;
                    if cells.insert(StateKey::new(r, c), w).is_some() {
                        return Err(err(format!("duplicate cell ({r}, {c})")));
                    }
                }
                _ => return Err(err(format!("unrecognized line '{line}'"))),
            }
        }
        let grid_size = grid_size.ok_or_else(|| invalid("instance file is missing grid_size"))?;
        let seed = seed.ok_or_else(|| invalid("instance file is missing seed"))?;
        let mut weights = Vec::with_capacity((grid_size * grid_size) as usize);
        for r in 0..grid_size {
            for c in 0..grid_size {
                let w = cells.remove(&StateKey::new(r, c)).ok_or_else(|| {
                    invalid(format!("instance file has no weight for ({r}, {c})"))
                })?;
                weights.push(w);
            }
        }
        if let Some((s, _)) = cells.into_iter().next() {
            return Err(invalid(format!("instance cell {s} is outside the grid")));
        }
        Self::from_weights(grid_size, seed, weights)
    }
}

/// Static description of an SMDP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmdpSpec {
    pub grid_size: u32,
    pub horizon: usize,
    pub start: StartDistribution,
    pub mode: RewardMode,
    pub kernel: SquaredExponential,
}

impl Default for SmdpSpec {
    fn default() -> Self {
        Self {
            grid_size: 10,
            horizon: 64,
            start: StartDistribution::Fixed(StateKey::new(0, 0)),
            mode: RewardMode::GraphSrl { additive: false },
            kernel: SquaredExponential::default(),
        }
    }
}

impl SmdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(invalid("grid size must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be >= 1"));
        }
        if let StartDistribution::Fixed(s) = self.start {
            if s.row >= self.grid_size || s.col >= self.grid_size {
                return Err(Error::StateOutOfBounds(s));
            }
        }
        if let RewardMode::GraphM { lambda } = self.mode {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(invalid("lambda must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        (self.grid_size * self.grid_size) as usize
    }
}

/// Reward mode together with the functions it is built from.
#[derive(Debug, Clone)]
pub struct RewardModel {
    mode: RewardMode,
    weights: WeightedNodeFunction,
    entropy: LogDetEntropyFunction,
}

impl RewardModel {
    pub fn new(
        mode: RewardMode,
        weights: WeightedNodeFunction,
        kernel: SquaredExponential,
    ) -> Self {
        Self {
            mode,
            weights,
            entropy: LogDetEntropyFunction::new(kernel),
        }
    }

    pub fn mode(&self) -> RewardMode {
        self.mode
    }

    /// The monotone submodular set function behind the mode, used to build
    /// submodularity graphs. The revisit penalty of `GraphM` is not part of
    /// it.
    pub fn oracle(&self) -> &dyn SubmodularOracle {
        if self.mode.is_graph() {
            &self.weights
        } else {
            &self.entropy
        }
    }

    pub fn tracker(&self) -> RewardTracker<'_> {
        RewardTracker {
            model: self,
            counts: HashMap::new(),
            chol: crate::gp::IncrementalCholesky::new(*self.entropy.kernel(), JITTER),
            distinct: Vec::new(),
            distinct_counts: Vec::new(),
        }
    }

    /// `R(tau)` evaluated from its definition for the mode.
    pub fn trajectory_reward(&self, traj: &Trajectory) -> f64 {
        let distinct = traj.distinct_states();
        match self.mode {
            RewardMode::GraphSrl { additive: false } => self.weights.evaluate(&distinct),
            RewardMode::GraphSrl { additive: true } => {
                traj.states.iter().map(|&s| self.weights.weight(s)).sum()
            }
            RewardMode::GraphM { lambda } => {
                let excess: u32 = traj.visit_counts.values().map(|&n| n - 1).sum();
                self.weights.evaluate(&distinct) - lambda * excess as f64
            }
            RewardMode::EntropyM => self.entropy.evaluate_points(&traj.states),
            RewardMode::EntropySrl => {
                let kernel = self.entropy.kernel();
                let mut cells: Vec<StateKey> = Vec::new();
                let mut counts: Vec<u32> = Vec::new();
                let mut total = 0.0;
                for &s in &traj.states {
                    let noise: Vec<f64> = counts.iter().map(|&n| JITTER / n as f64).collect();
                    total += entropy_term(posterior_variance(kernel, &cells, &noise, s));
                    match cells.iter().position(|&c| c == s) {
                        Some(i) => counts[i] += 1,
                        None => {
                            cells.push(s);
                            counts.push(1);
                        }
                    }
                }
                total
            }
        }
    }

    /// `[R(s_0), R(s_1 | tau_0:0), ..., R(s_H | tau_0:H-1)]`.
    pub fn prefix_marginals(&self, traj: &Trajectory) -> Vec<f64> {
        let mut tracker = self.tracker();
        traj.states.iter().map(|&s| tracker.push(s)).collect()
    }
}

/// Incremental reward bookkeeping along one trajectory.
pub struct RewardTracker<'a> {
    model: &'a RewardModel,
    counts: HashMap<StateKey, u32>,
    chol: crate::gp::IncrementalCholesky,
    distinct: Vec<StateKey>,
    distinct_counts: Vec<u32>,
}

impl RewardTracker<'_> {
    /// Records a visit to `s` and returns its marginal reward.
    pub fn push(&mut self, s: StateKey) -> f64 {
        let count = self.counts.entry(s).or_insert(0);
        *count += 1;
        let first = *count == 1;
        match self.model.mode {
            RewardMode::GraphSrl { additive } => {
                if first || additive {
                    self.model.weights.weight(s)
                } else {
                    0.0
                }
            }
            RewardMode::GraphM { lambda } => {
                if first {
                    self.model.weights.weight(s)
                } else {
                    -lambda
                }
            }
            RewardMode::EntropyM => 0.5 * self.chol.push(s).log2() + ENTROPY_OFFSET,
            RewardMode::EntropySrl => {
                let noise: Vec<f64> = self
                    .distinct_counts
                    .iter()
                    .map(|&n| JITTER / n as f64)
                    .collect();
                let var =
                    posterior_variance(self.model.entropy.kernel(), &self.distinct, &noise, s);
                if first {
                    self.distinct.push(s);
                    self.distinct_counts.push(1);
                } else {
                    let i = self
                        .distinct
                        .iter()
                        .position(|&c| c == s)
                        .expect("visited cell is tracked");
                    self.distinct_counts[i] += 1;
                }
                entropy_term(var)
            }
        }
    }
}

/// A realized episode: `H + 1` states, `H` actions and cached rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateKey>,
    pub actions: Vec<usize>,
    /// `prefix_rewards[h] = R(tau_0:h)`, `h = 0..=H`.
    pub prefix_rewards: Vec<f64>,
    /// `marginals[h] = R(s_h | tau_0:h-1)`, with `marginals[0] = R({s_0})`.
    pub marginals: Vec<f64>,
    pub visit_counts: BTreeMap<StateKey, u32>,
}

impl Trajectory {
    pub fn record(model: &RewardModel, states: Vec<StateKey>, actions: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::MalformedTrajectory("no states".into()));
        }
        if states.len() != actions.len() + 1 {
            return Err(Error::MalformedTrajectory(format!(
                "{} states for {} actions",
                states.len(),
                actions.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= NUM_ACTIONS) {
            return Err(Error::InvalidAction(a));
        }
        let mut tracker = model.tracker();
        let marginals: Vec<f64> = states.iter().map(|&s| tracker.push(s)).collect();
        let mut acc = 0.0;
        let prefix_rewards = marginals
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        let mut visit_counts = BTreeMap::new();
        for &s in &states {
            *visit_counts.entry(s).or_insert(0) += 1;
        }
        Ok(Self {
            states,
            actions,
            prefix_rewards,
            marginals,
            visit_counts,
        })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// `R(tau)` as accumulated during the episode.
    pub fn reward(&self) -> f64 {
        *self
            .prefix_rewards
            .last()
            .expect("trajectory has at least one state")
    }

    pub fn distinct_states(&self) -> StateSet {
        self.visit_counts.keys().copied().collect()
    }

    /// Distinct states at which an action was taken (`s_0 .. s_H-1`).
    pub fn acting_states(&self) -> StateSet {
        self.states[..self.actions.len()].iter().copied().collect()
    }
}

/// A grid SMDP instance.
#[derive(Debug, Clone)]
pub struct GridEnv {
    spec: SmdpSpec,
    model: RewardModel,
}

impl GridEnv {
    pub fn new(spec: SmdpSpec, instance: &GridInstance) -> Result<Self> {
        spec.validate()?;
        if instance.grid_size() != spec.grid_size {
            return Err(invalid(format!(
                "instance grid size {} does not match environment grid size {}",
                instance.grid_size(),
                spec.grid_size
            )));
        }
        let model = RewardModel::new(spec.mode, instance.node_function(), spec.kernel);
        Ok(Self { spec, model })
    }

    pub fn spec(&self) -> &SmdpSpec {
        &self.spec
    }

    pub fn model(&self) -> &RewardModel {
        &self.model
    }

    pub fn contains(&self, s: StateKey) -> bool {
        s.row < self.spec.grid_size && s.col < self.spec.grid_size
    }

    /// All cells in key order.
    pub fn states(&self) -> impl Iterator<Item = StateKey> {
        let g = self.spec.grid_size;
        (0..g).flat_map(move |r| (0..g).map(move |c| StateKey::new(r, c)))
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> StateKey {
        match self.spec.start {
            StartDistribution::Fixed(s) => s,
            StartDistribution::Uniform => {
                let g = self.spec.grid_size;
                StateKey::new(rng.gen_range(0..g), rng.gen_range(0..g))
            }
        }
    }

    pub fn reset_seeded(&self, seed: u64) -> StateKey {
        self.reset(&mut rng::stream(seed, "reset", &[]))
    }

    pub fn step(&self, s: StateKey, action: usize) -> Result<StateKey> {
        if !self.contains(s) {
            return Err(Error::StateOutOfBounds(s));
        }
        let last = self.spec.grid_size - 1;
        let next = match Action::from_index(action)? {
            Action::Up => StateKey::new(s.row.saturating_sub(1), s.col),
            Action::Down => StateKey::new((s.row + 1).min(last), s.col),
            Action::Left => StateKey::new(s.row, s.col.saturating_sub(1)),
            Action::Right => StateKey::new(s.row, (s.col + 1).min(last)),
            Action::Stay => s,
        };
        Ok(next)
    }

    /// Replays `actions` from `start` and records the trajectory.
    pub fn replay(&self, start: StateKey, actions: &[usize]) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(actions.len() + 1);
        states.push(start);
        let mut s = start;
        for &a in actions {
            s = self.step(s, a)?;
            states.push(s);
        }
        Trajectory::record(&self.model, states, actions.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(r: u32, c: u32) -> StateKey {
        StateKey::new(r, c)
    }

    fn unit_model(mode: RewardMode) -> RewardModel {
        let weights = (0..10)
            .flat_map(|r| (0..10).map(move |c| (key(r, c), 1.0)))
            .collect();
        RewardModel::new(
            mode,
            WeightedNodeFunction::new(weights).unwrap(),
            SquaredExponential::default(),
        )
    }

    fn env(mode: RewardMode, start: StartDistribution) -> GridEnv {
        let spec = SmdpSpec {
            mode,
            start,
            ..SmdpSpec::default()
        };
        GridEnv::new(spec, &GridInstance::generate(10, 1).unwrap()).unwrap()
    }

    #[test]
    fn moves_and_boundaries() {
        let e = env(RewardMode::EntropyM, StartDistribution::Uniform);
        assert_eq!(e.step(key(0, 0), Action::Up.index()).unwrap(), key(0, 0));
        assert_eq!(e.step(key(3, 4), Action::Stay.index()).unwrap(), key(3, 4));
        assert_eq!(e.step(key(3, 4), Action::Right.index()).unwrap(), key(3, 5));
        assert_eq!(e.step(key(9, 9), Action::Down.index()).unwrap(), key(9, 9));
        assert_eq!(e.step(key(9, 9), Action::Right.index()).unwrap(), key(9, 9));
        assert_eq!(e.step(key(5, 0), Action::Left.index()).unwrap(), key(5, 0));
        assert!(matches!(e.step(key(0, 0), 5), Err(Error::InvalidAction(5))));
        assert!(e.step(key(10, 0), 0).is_err());
    }

    #[test]
    fn fixed_start_and_seeded_uniform_start() {
        let fixed = env(RewardMode::EntropyM, StartDistribution::Fixed(key(0, 0)));
        assert_eq!(fixed.reset_seeded(1), key(0, 0));
        assert_eq!(fixed.reset_seeded(2), key(0, 0));
        let uniform = env(RewardMode::EntropyM, StartDistribution::Uniform);
        assert_eq!(uniform.reset_seeded(99), uniform.reset_seeded(99));
    }

    #[test]
    fn graph_srl_set_semantics() {
        let m = unit_model(RewardMode::GraphSrl { additive: false });
        let (x, y) = (key(0, 0), key(0, 1));
        let t = Trajectory::record(&m, vec![x, y, x], vec![3, 2]).unwrap();
        assert_eq!(m.trajectory_reward(&t), 2.0);
        assert_eq!(m.prefix_marginals(&t), vec![1.0, 1.0, 0.0]);
        assert_eq!(t.reward(), 2.0);
    }

    #[test]
    fn graph_srl_additive_toggle() {
        let m = unit_model(RewardMode::GraphSrl { additive: true });
        let (x, y) = (key(0, 0), key(0, 1));
        let t = Trajectory::record(&m, vec![x, y, x], vec![3, 2]).unwrap();
        assert_eq!(m.trajectory_reward(&t), 3.0);
    }

    #[test]
    fn graph_m_penalizes_excess_revisits() {
        let m = unit_model(RewardMode::GraphM { lambda: 0.1 });
        let (x, y) = (key(0, 0), key(0, 1));
        let t = Trajectory::record(&m, vec![x, y, x], vec![3, 2]).unwrap();
        assert!((m.trajectory_reward(&t) - 1.9).abs() < 1e-12);
        assert_eq!(m.prefix_marginals(&t), vec![1.0, 1.0, -0.1]);
    }

    #[test]
    fn entropy_srl_first_visit() {
        let m = unit_model(RewardMode::EntropySrl);
        let t = Trajectory::record(&m, vec![key(2, 2)], vec![]).unwrap();
        let expected = 0.5 * (1.0 + 1e-6f64).log2() + ENTROPY_OFFSET;
        assert!((m.trajectory_reward(&t) - expected).abs() < 1e-12);
        assert!((m.trajectory_reward(&t) - 9.965785).abs() < 1e-6);
    }

    #[test]
    fn entropy_m_revisit_adds_about_half_a_bit() {
        let m = unit_model(RewardMode::EntropyM);
        let t = Trajectory::record(&m, vec![key(3, 3), key(3, 3)], vec![4]).unwrap();
        // det([[1+e, 1], [1, 1+e]]) = 2e + e^2
        let e = 1e-6f64;
        let expected = 0.5 * (2.0 * e + e * e).log2() + 2.0 * ENTROPY_OFFSET;
        assert!((m.trajectory_reward(&t) - expected).abs() < 1e-6);
        assert!((m.trajectory_reward(&t) - 10.465785).abs() < 1e-5);
    }

    #[test]
    fn entropy_srl_revisits_diminish_strictly() {
        let m = unit_model(RewardMode::EntropySrl);
        let s = key(4, 4);
        let t = Trajectory::record(&m, vec![s; 6], vec![4; 5]).unwrap();
        let marg = m.prefix_marginals(&t);
        for w in marg.windows(2) {
            assert!(w[1] < w[0], "{marg:?}");
        }
        assert!(marg.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn entropy_modes_agree_numerically() {
        // The per-visit conditional terms telescope into the log-determinant.
        let m = unit_model(RewardMode::EntropyM);
        let srl = unit_model(RewardMode::EntropySrl);
        let states = vec![
            key(0, 0),
            key(0, 1),
            key(1, 1),
            key(0, 1),
            key(0, 0),
            key(0, 0),
        ];
        let t_m = Trajectory::record(&m, states.clone(), vec![0; 5]).unwrap();
        let t_s = Trajectory::record(&srl, states, vec![0; 5]).unwrap();
        assert!((m.trajectory_reward(&t_m) - srl.trajectory_reward(&t_s)).abs() < 1e-6);
    }

    #[test]
    fn telescoping_matches_reward() {
        let e = env(RewardMode::EntropySrl, StartDistribution::Fixed(key(0, 0)));
        for mode in RewardMode::all() {
            let model = RewardModel::new(
                mode,
                GridInstance::generate(10, 3).unwrap().node_function(),
                SquaredExponential::default(),
            );
            let env = GridEnv {
                spec: *e.spec(),
                model,
            };
            let t = env.replay(key(2, 2), &[0, 3, 3, 1, 2, 4, 0, 0, 1]).unwrap();
            let sum: f64 = env.model().prefix_marginals(&t).iter().sum();
            assert!(
                (sum - env.model().trajectory_reward(&t)).abs() < 1e-9,
                "{mode}"
            );
            assert!((t.reward() - sum).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_horizon_trajectory() {
        let m = unit_model(RewardMode::GraphSrl { additive: false });
        let t = Trajectory::record(&m, vec![key(1, 1)], vec![]).unwrap();
        assert_eq!(m.prefix_marginals(&t), vec![1.0]);
        assert_eq!(t.prefix_rewards, vec![1.0]);
    }

    #[test]
    fn malformed_trajectories() {
        let m = unit_model(RewardMode::EntropyM);
        assert!(Trajectory::record(&m, vec![], vec![]).is_err());
        assert!(Trajectory::record(&m, vec![key(0, 0)], vec![1]).is_err());
        assert!(Trajectory::record(&m, vec![key(0, 0), key(0, 0)], vec![7]).is_err());
    }

    #[test]
    fn instance_round_trip() {
        let inst = GridInstance::generate(4, 11).unwrap();
        assert!(inst.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
        let mut buf = Vec::new();
        inst.write(&mut buf).unwrap();
        let back = GridInstance::read(buf.as_slice()).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn instance_parse_errors() {
        assert!(GridInstance::read("grid_size 2\nseed 1\n0 0 0.5\n".as_bytes()).is_err());
        assert!(GridInstance::read("grid_size 1\nseed 1\n0 0 x\n".as_bytes()).is_err());
        assert!(GridInstance::read("grid_size 1\nseed 1\n0 0 0.5\n0 0 0.5\n".as_bytes()).is_err());
        assert!(GridInstance::read("grid_size 1\nseed 1\n0 0 0.5\n3 3 0.5\n".as_bytes()).is_err());
        assert!(GridInstance::read("grid_size 1\nseed 1\n0 0 0.5\n".as_bytes()).is_ok());
    }
}
