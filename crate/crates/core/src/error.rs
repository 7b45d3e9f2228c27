use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HtdsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl HtdsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HtdsError::Io { path: path.into(), source }
    }

    pub fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        HtdsError::Parse { file: file.into(), line, msg: msg.into() }
    }

    /// Process exit code for the command-line surface.
    pub fn exit_code(&self) -> i32 {
        match self {
            HtdsError::Numeric(_) => 3,
            HtdsError::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, HtdsError>;
