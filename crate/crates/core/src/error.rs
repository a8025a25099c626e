use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors surfaced by the solvers and the pipeline.
#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum KsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("integration stalled at t={t:.6e} (step size underflow), last state {state:?}")]
    IntegrationStalled { t: f64, state: Vec<f64> },
    #[error("no finite decay limit: {0}")]
    NoFiniteLimit(String),
    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),
    #[error("ambiguous zero near x={location:.6e}")]
    AmbiguousZero { location: f64 },
    #[error("solver diverged at t={t:.6e}: {reason}")]
    SolverDiverged { t: f64, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for KsError {
    fn from(e: std::io::Error) -> Self {
        KsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KsError>;
