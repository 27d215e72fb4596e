//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A solution violates the feasibility rules of its problem.
    #[error("infeasible solution: {0}")]
    Infeasible(String),

    /// An instance admits no feasible solution.
    #[error("infeasible instance: {0}")]
    InfeasibleInstance(String),

    /// A numeric routine failed to converge or produced no usable value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A denoising chain produced a non-finite intermediate.
    #[error("sampling produced a non-finite value at step t={step}")]
    Sampling { step: usize },

    /// An operation was called in the wrong order (e.g. backward without forward).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Dataset generation gave up (e.g. too many infeasible draws in a row).
    #[error("dataset generation failed: {0}")]
    Generation(String),

    /// A persisted file declares an unsupported format version.
    #[error("format version mismatch: found {found}, expected {expected}")]
    FormatVersion { found: u32, expected: u32 },

    /// A persisted file is malformed. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
