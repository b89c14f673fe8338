use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs with inconsistent shapes or violated preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Zero-norm CSI row or similar measure-zero event.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular channel estimate at BS {bs} (condition estimate {condition:.3e})")]
    Singular { bs: usize, condition: f64 },

    /// Enumeration would blow past the configured size guard.
    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
