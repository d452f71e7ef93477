use thiserror::Error;

/// Errors produced by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OsdeError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature hit its subdivision limit.
    #[error(
        "quadrature did not converge: worst subinterval [{lo}, {hi}] has error estimate {error:.3e}"
    )]
    Quadrature { lo: f64, hi: f64, error: f64 },

    /// A projection coefficient could not be computed.
    #[error("projection failed for index {index:?}: {reason}")]
    Projection { index: Vec<usize>, reason: String },
}

impl OsdeError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        OsdeError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, OsdeError>;
