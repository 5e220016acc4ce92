use std::path::PathBuf;

/// Errors raised by the simulator core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("mixing matrix violates {condition}: {detail}")]
    AssumptionViolation {
        condition: &'static str,
        detail: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("estimator protocol error: {0}")]
    Protocol(String),

    #[error(
        "inner maximization did not converge after {iterations} iterations (residual {residual:e})"
    )]
    OracleFailure { iterations: usize, residual: f64 },

    #[error("diverged at iteration {iteration}: {quantity} has norm {norm:e}")]
    Diverged {
        iteration: usize,
        quantity: &'static str,
        norm: f64,
    },

    #[error("{path}: row {row}: {message}")]
    Ingestion {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
