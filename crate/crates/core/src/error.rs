use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("malformed {what} file: {message}")]
    Format { what: &'static str, message: String },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("loss undefined: mask has no unknown pixels")]
    NoUnknownPixels,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn range(msg: impl Into<String>) -> Self {
        Error::Range(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the error class: 2 config, 3 I/O and file
    /// formats, 4 numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Range(_) | Error::Shape(_) => 2,
            Error::Parse { .. } | Error::Format { .. } | Error::Checkpoint(_) | Error::Io { .. } => 3,
            Error::NoUnknownPixels | Error::Numerical(_) => 4,
        }
    }
}
