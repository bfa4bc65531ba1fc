use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("kernel matrix is not numerically positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    SingularGram { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("no LiDAR ray hit the object")]
    NoReturns,

    #[error("problem too large for enumeration: {n} constraints (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("agent {agent_id} disagrees with consensus by {deviation:e} (limit {limit:e})")]
    ConsensusViolation {
        agent_id: usize,
        deviation: f64,
        limit: f64,
    },

    #[error("ADMM diverged at iteration {iteration}: {reason}")]
    NumericalDivergence { iteration: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed table at line {line}: {message}")]
    Parse { line: usize, message: String },
}
