use thiserror::Error;

use crate::submodular::StateKey;

#[derive(Debug, Error)]
pub enum Error {
    #[error("element {0} is already in the set")]
    ElementInSet(StateKey),
    #[error("ground set of size {size} is too large for exhaustive checking (max {max})")]
    GroundSetTooLarge { size: usize, max: usize },
    #[error("cardinality k = {k} out of range 1..={n}")]
    CardinalityOutOfRange { k: usize, n: usize },
    #[error("submodularity graph needs at least 2 states, got {0}")]
    GraphTooSmall(usize),
    #[error("sample set must be nonempty")]
    EmptySample,
    #[error("state {0} is not part of the graph")]
    UnknownState(StateKey),
    #[error("state {0} is already in the sample set")]
    StateInSample(StateKey),
    #[error("ground set must be nonempty")]
    EmptyGroundSet,
    #[error("invalid action index {0}")]
    InvalidAction(usize),
    #[error("state {0} is outside the grid")]
    StateOutOfBounds(StateKey),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    InvalidConfig(String),
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no trajectories to estimate from")]
    NoTrajectories,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
