use thiserror::Error;

use crate::solver::TraceRecord;

/// Errors raised by problem construction, proximal oracles and the solver engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid instance: {0}")]
    Instance(String),

    #[error("infeasible set: {0}")]
    Infeasible(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("projection did not converge after {iters} iterations (last change {change:.3e})")]
    Nonconvergence { iters: usize, change: f64 },

    #[error("step-size policy error: {0}")]
    Policy(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("iterates diverged at k = {k}")]
    Divergence {
        k: usize,
        last: Option<Box<TraceRecord>>,
    },

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
