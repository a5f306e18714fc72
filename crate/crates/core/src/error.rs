use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("branching factor must be at least 1")]
    ZeroBranching,
    #[error("tree with k={k}, depth={depth} overflows the vertex index range")]
    TreeTooLarge { k: usize, depth: usize },
    #[error("vertex {index} out of range for tree with {len} vertices")]
    InvalidVertex { index: usize, len: usize },
    #[error("configuration has {got} sites, tree has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("state space capped at {cap} vertices, tree has {len}")]
    StateSpaceTooLarge { cap: usize, len: usize },
    #[error("generator is reducible: {0}")]
    Reducible(String),
    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),
    #[error("distributions live on different outcome sets ({left} vs {right})")]
    OutcomeMismatch { left: usize, right: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
    #[error("series too short: {0}")]
    SeriesTooShort(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("equilibration failure: {0}")]
    Equilibration(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
