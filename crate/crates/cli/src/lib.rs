//! Configuration-driven experiment runner for the block primal-dual solver.

pub mod config;
pub mod experiment;
pub mod rates;

pub use config::RunConfig;
pub use experiment::{run_experiment, Artifacts, TRACE_HEADER};
pub use rates::{fit_rate, RateFit};

use thiserror::Error;

/// Failures of a CLI run, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("insufficient data for a rate fit: need {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error(transparent)]
    Solver(#[from] blockpd::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for configuration errors, 3 for divergence, 4 for infeasible instances, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(blockpd::Error::Divergence { .. }) => 3,
            CliError::Solver(blockpd::Error::Infeasible(_) | blockpd::Error::Instance(_)) => 4,
            CliError::Solver(blockpd::Error::Ingest(_)) => 2,
            _ => 1,
        }
    }
}
