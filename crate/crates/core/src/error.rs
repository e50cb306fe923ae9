use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped so that callers (notably the CLI) can map them to
/// coarse failure classes: configuration problems, data problems, and
/// training failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {msg}")]
    DataFile { path: PathBuf, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("bias undefined for pair ({b}, {z}): {reason}")]
    UndefinedBias { b: usize, z: usize, reason: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data_file(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::DataFile {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
