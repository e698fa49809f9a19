//! Crate-wide error type.
//!
//! Variants are grouped so the CLI can map them onto exit codes: configuration
//! problems (exit 2), divergence halts (exit 3), and everything else (exit 1).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad enum value, out-of-range hyperparameter,
    /// mismatched network shapes, unknown registry key.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called on an incompatible object (e.g. requesting a
    /// joint scalar from the `dec` decomposition).
    #[error("usage error: {0}")]
    Usage(String),

    /// Dataset ingestion/validation failure. `line` is 1-based and counts the
    /// header line as line 1; it is 0 when the offending record did not come
    /// from a file (e.g. an in-memory batch).
    #[error("dataset error at line {line}: {msg}")]
    Dataset { line: usize, msg: String },

    /// Training produced a non-finite quantity; the run halts with this
    /// diagnostic.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn dataset(line: usize, msg: impl Into<String>) -> Self {
        Error::Dataset { line, msg: msg.into() }
    }
    pub fn divergence(msg: impl Into<String>) -> Self {
        Error::Divergence(msg.into())
    }
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code the CLI should report for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Divergence(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
