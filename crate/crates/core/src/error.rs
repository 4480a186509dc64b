use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the classical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("unknown label {value:?} on row {row} (expected 0 or 1)")]
    UnknownLabel { row: usize, value: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("need both classes present: {0}")]
    SingleClass(String),

    #[error("pool too small: requested {requested}, available {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("unknown token id {0}")]
    UnknownTokenId(u32),

    #[error("parse error: {0}")]
    Parse(String),
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
