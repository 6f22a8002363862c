//! Experiment harness for `rkhs-envelope`: the Hénon surface study, the
//! comparison against sub-optimal and Gaussian-process bounds, and the
//! constrained optimization example, plus the `rkhs-envelope` command line.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, GroundTruthKind, MethodKind, NoiseKind, SamplingKind};
pub use experiments::{
    henon_ground_truth, run_comparison, run_example1, run_example2, run_shrinkage_check, BoundTable,
    Example1Report, Example2Report, GroundTruth, TableRow,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },

    #[error(transparent)]
    Core(#[from] rkhs_envelope::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use rkhs_envelope::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Infeasible(_) => 3,
            CliError::CheckFailed(_) => 1,
            CliError::Core(E::Io { .. } | E::Parse { .. } | E::InvalidArgument(_) | E::DimensionMismatch { .. }) => 2,
            CliError::Core(E::Inconsistent(_)) => 3,
            CliError::Core(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
