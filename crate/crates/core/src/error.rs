use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A structured file could not be parsed; `record` is 1-based.
    #[error("{path}: record {record}: {message}")]
    Format {
        path: String,
        record: usize,
        message: String,
    },

    #[error("{path}: unsupported schema version {found} (expected {expected})")]
    SchemaVersion {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("dimension mismatch for `{id}`: expected {expected}, found {found}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in vector `{id}`")]
    NonFinite { id: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("contrastive loss needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("metric requires at least one query")]
    EmptyQuerySet,

    #[error("binary mismatch: predictions are for `{found}`, ground truth is for `{expected}`")]
    BinaryMismatch { expected: String, found: String },

    #[error("unknown file `{0}`")]
    UnknownFile(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl std::fmt::Display, record: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_string(),
            record,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
