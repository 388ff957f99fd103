use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {source_name} at byte offset {offset}: {reason}")]
    Format {
        source_name: String,
        offset: usize,
        reason: String,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("empty collection: {0}")]
    EmptyCollection(String),

    #[error("index is empty")]
    EmptyIndex,

    #[error("duplicate image id `{0}`")]
    DuplicateId(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::Dimension { expected, found }
    }
}
