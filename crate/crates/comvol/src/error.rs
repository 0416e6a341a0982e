//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by market ingestion, calibration, pricing and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file (CSV/JSON parse failures, bad headers).
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    /// A loaded object violates one of its invariants.
    #[error("invalid input ({context}): {message}")]
    InvalidInput { context: String, message: String },

    /// A quantity was requested outside the supported domain
    /// (extrapolation, strike below the absorbing level, ...).
    #[error("domain error ({context}): {message}")]
    Domain { context: String, message: String },

    /// A numerical routine failed to reach its target accuracy.
    #[error("numerical failure ({context}): {message}")]
    Numerical { context: String, message: String },

    /// The calibration loop stopped before reaching the error threshold.
    /// Best-effort artifacts are still available to the caller.
    #[error("calibration did not converge: max error {max_error_bp:.4} bp after {iterations} iterations")]
    NotConverged { max_error_bp: f64, iterations: usize },

    #[error("model schema mismatch: expected version {expected}, found {found}")]
    SchemaMismatch { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn invalid(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn domain(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Domain {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn numerical(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            message: message.into(),
        }
    }
}
