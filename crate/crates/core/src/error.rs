use thiserror::Error;

use crate::mountainpass::Unconverged;

/// Errors produced by the solver and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("field contains non-finite values")]
    NonFinite,

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("kernel/dimension mismatch: {0}")]
    KernelDimension(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("cannot project onto the constraint manifold: quartic term vanishes")]
    ProjectionFailed,

    #[error("singular tridiagonal system at row {row}")]
    Singular { row: usize },

    #[error("solver did not converge after {} iterations (gradient norm {:.3e})", .0.report.iterations, .0.report.grad_norm)]
    NonConvergence(Box<Unconverged>),

    #[error("constrained descent did not converge after {iterations} iterations (residual {residual:.3e})")]
    ManifoldNonConvergence { iterations: usize, residual: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
