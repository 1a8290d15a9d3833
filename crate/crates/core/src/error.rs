use thiserror::Error;

/// Errors raised by the detection, privacy and design routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("generalized eigenproblem has no finite eigenvalues (second matrix is zero)")]
    EmptyPencil,

    /// The interconnection elimination removed every direction of the local
    /// measurements, so no processed measurements exist.
    #[error("degenerate detection setup: no processed measurements remain after elimination")]
    DegenerateSetup,

    /// `q = 0`: the processed measurements carry no attack signature.
    #[error("no test possible: processed measurements have zero attack rank")]
    NoTestPossible,

    #[error("noise design infeasible for subsystem {subsystem}: constraint matrix is zero but epsilon = {epsilon}")]
    Infeasible { subsystem: usize, epsilon: f64 },

    #[error("unsupported problem: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::DimensionMismatch {
        context: context.to_string(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
