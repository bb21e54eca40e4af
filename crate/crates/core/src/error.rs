use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("{0}: input must not be empty")]
    EmptyInput(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated table: {0}")]
    TruncatedTable(String),

    #[error("embedding entry {index}: {message}")]
    BadEntry { index: usize, message: String },

    #[error("duplicate token {token:?} at entry {index}")]
    DuplicateToken { token: String, index: usize },

    #[error("invalid ontology: {0}")]
    Ontology(String),

    #[error("invalid corpus: {0}")]
    Corpus(String),

    #[error("checkpoint error in {tensor}: {message}")]
    Checkpoint { tensor: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training failed for {unit}: {message}")]
    Training { unit: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(
        op: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
