use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Validation errors (bad parameters, shape mismatches, failed preconditions)
/// are distinguished from numerical failures so that callers such as the CLI
/// can map them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("region nesting violated: {0}")]
    Nesting(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    CgDivergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("certification failed: {0}")]
    CertificationFailure(String),

    #[error("degenerate reference trajectory: min |y| on the control support is {min:.3e} (threshold {threshold:.3e})")]
    DegenerateReference { min: f64, threshold: f64 },

    #[error("fixed point iteration is not contracting: {reason}")]
    NonContraction { reason: String, history: Vec<f64> },

    #[error("derivative stencil leaves the grid: requested order {requested}, max feasible {max_feasible}")]
    StencilOutOfDomain { requested: usize, max_feasible: usize },

    #[error("selection failure: best |det| = {best:.3e} <= {tol:.3e}")]
    SelectionFailure { best: f64, tol: f64 },

    #[error("no admissible bump scale h >= {min_h} found")]
    ScaleSearchFailure { min_h: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::ShapeMismatch(_)
                | Error::Nesting(_)
                | Error::GridTooCoarse(_)
                | Error::Config(_)
                | Error::StencilOutOfDomain { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
