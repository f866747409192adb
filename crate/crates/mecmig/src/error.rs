use thiserror::Error;

/// Crate-wide error type. Messages name the offending field or constraint so
/// callers can surface them directly.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor argument failed validation.
    #[error("invalid {field}: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    /// Matrix or vector dimensions disagree.
    #[error("dimension mismatch: {0}")]
    Shape(String),

    /// An assignment or load vector violates a feasibility constraint.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A brute-force enumeration would exceed its size guard.
    #[error("enumeration too large: {0}")]
    TooLarge(String),

    /// An iterative solve exhausted its budget without meeting tolerances.
    #[error("no convergence: {0}")]
    NoConvergence(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput { field, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
