use std::path::PathBuf;

/// Errors raised by the library. Solver outcomes such as infeasibility are
/// reported through [`crate::SolveStatus`] rather than through this type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("factorization failed even with jitter cap {cap:.3e}")]
    FactorizationFailed { cap: f64 },

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("query too close to data (schur complement {schur:.3e})")]
    NearData { schur: f64 },

    #[error("inconsistent hyperparameters: {0}")]
    Inconsistent(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
