use thiserror::Error;

/// Errors raised by the structure-learning pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A flat or variable index outside its valid range (reported 1-based).
    #[error("index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    /// Tied observations in a column; the rank theory assumes continuous margins.
    #[error(
        "ties detected in column {column} (1-based); Kendall's tau assumes continuous margins"
    )]
    Ties { column: usize },

    /// A dense p x p object would exceed the configured size limit.
    #[error("capacity exceeded: p = {p} exceeds the limit {limit} for dense p x p objects; use the diagonal mode")]
    Capacity { p: usize, limit: usize },

    /// The covariance (or correlation) matrix could not be inverted reliably.
    #[error("singular matrix{}: {reason}; increase the shrinkage weight w", step.map(|s| format!(" at path step {s}")).unwrap_or_default())]
    Singular { step: Option<usize>, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn singular(reason: impl Into<String>) -> Self {
        Error::Singular {
            step: None,
            reason: reason.into(),
        }
    }

    /// Attaches the path step at which a singular solve happened.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::Singular { reason, .. } => Error::Singular {
                step: Some(step),
                reason,
            },
            other => other,
        }
    }
}
