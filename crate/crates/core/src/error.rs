use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum PegError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid graph: {0}")]
    Validation(String),
    #[error("invalid size: {0}")]
    Size(String),
    #[error("graph generation failed: {0}")]
    Generation(String),
    #[error("node {node} out of range for graph with {n} nodes")]
    Index { node: usize, n: usize },
    #[error("table of {entries} entries exceeds budget of {budget}")]
    Budget { entries: u128, budget: u64 },
    #[error("finite capture distance would reach the infinity sentinel")]
    Overflow,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("table was solved for graph {expected:016x}, got graph {actual:016x}")]
    HashMismatch { expected: u64, actual: u64 },
    #[error("malformed table file: {0}")]
    Format(String),
    #[error("announced pursuer move is not legal from the current state")]
    IllegalAnnouncement,
    #[error("feasible-position set is empty")]
    EmptyPos,
    #[error("belief has zero total mass")]
    ZeroMass,
    #[error("tracker collapsed: {0}")]
    TrackerCollapse(String),
    #[error("no initial state satisfies the start constraints")]
    NoValidStart,
    #[error("illegal move: {0}")]
    IllegalMove(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PegError> = std::result::Result<T, E>;
