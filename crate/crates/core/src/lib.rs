//! Submodular-reward policy optimization on gridworld SMDPs.
//!
//! Trajectory rewards are monotone submodular set functions over visited
//! states. Training is score-function policy gradient with marginal-gain
//! returns; the SGPO variant first prunes each episode's state set with a
//! submodularity graph and only keeps gradient terms for surviving states.
//!
//! Module map:
//!
//! * [`submodular`] - set-function oracles, marginal gains, exhaustive
//!   property checks and lazy greedy maximization.
//! * [`sparsifier`] - submodularity graph and the sample/prune loop.
//! * [`env`] - grid environments, reward modes and trajectories.
//! * [`policy`] - tabular and MLP softmax policies plus a state-value critic.
//! * [`trainer`] - rollouts, gradient estimation, updates and the epoch loop.
//! * [`oracle`] / [`checks`] - brute-force references and the check suites.

pub mod checks;
pub mod env;
pub mod error;
pub mod gp;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod sparsifier;
pub mod submodular;
pub mod trainer;

pub use error::{Error, Result};
pub use submodular::{StateKey, StateSet, SubmodularOracle};
