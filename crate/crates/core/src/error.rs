use nalgebra::DVector;
use thiserror::Error;

/// Errors produced by the estimation routines.
#[derive(Debug, Error)]
pub enum ReadError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("singular design: numerical rank {rank} < {dim}")]
    SingularDesign { rank: usize, dim: usize },

    #[error("fixed-point iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: DVector<f64>,
    },

    #[error("nondifferentiable point: {0}")]
    NonDifferentiable(&'static str),

    #[error("covariance estimate is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = ReadError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> ReadError {
    ReadError::InvalidInput(msg.into())
}
