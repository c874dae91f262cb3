use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidInput { op: &'static str, msg: String },

    #[error("{kind} id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },

    #[error("backward already ran on this tape; reset it first")]
    BackwardTwice,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidInput {
            op,
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Io { .. } | Error::Csv(_) | Error::Json(_) | Error::Checkpoint(_) => 2,
            Error::IdOutOfRange { .. } => 2,
            Error::NonFiniteLoss { .. } => 3,
            Error::Shape { .. } | Error::InvalidInput { .. } | Error::BackwardTwice => 3,
        }
    }
}
