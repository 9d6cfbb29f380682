//! Error taxonomy shared by all modules.
//!
//! Variants map onto the three failure classes the CLI distinguishes:
//! configuration/validation problems (exit 2), convergence failures (exit 3),
//! and numeric breakdowns that indicate a genuinely ill-posed discrete problem.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user-facing configuration (grid sizes, ranges, malformed input).
    #[error("configuration error: {0}")]
    Config(String),

    /// Shape or form-type mismatch between sections/operators.
    #[error("type error: {0}")]
    Type(String),

    /// Preconditions on mathematical data violated (non-holomorphic q,
    /// non-integrable input, unsolved metric, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Iterative solver failed to reach tolerance.
    #[error("convergence error: {0}")]
    Convergence(String),

    /// Numeric breakdown: ill-conditioned exponentials, missing spectral gap,
    /// indefinite metric, non-convergent linear solve.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Type(_) | Error::Validation(_) | Error::Io(_) | Error::Serde(_) => 2,
            Error::Convergence(_) | Error::Numeric(_) => 3,
        }
    }
}
