//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("node id {id} out of bounds (graph has {n} nodes)")]
    NodeOutOfBounds { id: u64, n: usize },

    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("invalid config key `{0}`")]
    ConfigKey(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {format} data: {msg}")]
    Format { format: &'static str, msg: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
