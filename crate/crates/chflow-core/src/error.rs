//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("flow vector is not feasible: {0}")]
    InfeasibleFlow(String),

    #[error("trajectory diverged on day {day}: {detail}")]
    Divergence { day: usize, detail: String },

    #[error("solver did not converge within {max_iter} iterations (residual {residual:.3e})")]
    MaxIterExceeded { max_iter: usize, residual: f64 },

    #[error("eigenvalue iteration failed to converge")]
    EigenNonConvergence,

    #[error("equilibrium is on the boundary of the feasible set: {0}")]
    BoundaryEquilibrium(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("invalid data: {0}")]
    InvalidData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
