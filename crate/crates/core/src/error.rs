//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value or an inconsistent set of options.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor or feature shape mismatch; names the offending tensor.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Operation invoked in an invalid state (stale cache, missing model).
    #[error("state error: {0}")]
    State(String),

    /// Training diverged or produced a non-finite loss.
    #[error("training error: {0}")]
    Training(String),

    /// Checkpoint or other binary format violation.
    #[error("format error: {0}")]
    Format(String),

    /// Text parse failure with file/line context.
    #[error("parse error: {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Report generation failure (missing inputs, empty data).
    #[error("report error: {0}")]
    Report(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn parse(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}
