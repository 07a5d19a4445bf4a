use thiserror::Error;

use crate::engine::RuleId;
use crate::fact::ObjectId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed frame {frame}: {reason}")]
    MalformedFrame { frame: usize, reason: String },

    #[error("duplicate object id {id} in frame {frame}")]
    DuplicateObject { frame: usize, id: ObjectId },

    #[error("need at least {needed} frames, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("no rule with id {0}")]
    RuleNotFound(RuleId),

    #[error("cannot fit {k} components to {n} vectors")]
    InvalidK { k: usize, n: usize },

    #[error("vectors have inconsistent dimensions ({expected} vs {found})")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("schema error at line {line}, column {column}: {message}")]
    Schema {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported schema version {found} (expected {expected})")]
    UnsupportedVersion { found: u64, expected: u64 },

    #[error("invalid project: {0}")]
    InvalidProject(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            return Error::Io(err.into());
        }
        Error::Schema {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
