//! Crate-wide error type.

use std::path::PathBuf;

/// Errors raised by field construction, matching, synthesis and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two inputs that must agree in shape (or depth) do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Building the requested correlation volumes would exceed the memory
    /// budget.  Reduce the input resolution or raise the budget.
    #[error("correlation volume of {required} bytes exceeds budget of {budget} bytes")]
    MemoryBudget { required: u64, budget: u64 },

    /// A file exists but its contents do not parse as the expected format.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Random synthesis failed to produce an acceptable sample.
    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// I/O failure on an in-memory or caller-supplied stream (no path known).
    #[error("stream i/o error: {0}")]
    Stream(#[from] std::io::Error),
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Shorthand for a format error at `path`.
    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Shorthand for a parameter-domain violation.
    pub fn parameter(reason: impl Into<String>) -> Self {
        Error::Parameter(reason.into())
    }

    /// Shorthand for a synthesis failure.
    pub fn synthesis(reason: impl Into<String>) -> Self {
        Error::Synthesis(reason.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
