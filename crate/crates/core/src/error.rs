use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("corpus id mismatch: expected {expected:?}, found {found:?}")]
    CorpusMismatch { expected: String, found: String },

    #[error("duplicate word {0:?}")]
    DuplicateWord(String),

    #[error("word {0:?} cannot be used as an archive file name")]
    InvalidWord(String),

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("checksum mismatch for {word:?}: manifest {expected:016x}, payload {actual:016x}")]
    ChecksumMismatch {
        word: String,
        expected: u64,
        actual: u64,
    },

    #[error("truncated payload for {word:?}: expected {expected} bytes, found {found}")]
    Truncated {
        word: String,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("covariance needs at least two siblings, {word:?} has {count}")]
    DegenerateCount { word: String, count: usize },

    #[error("covariance is not invertible: {0}")]
    NotInvertible(String),

    #[error("incompatible configuration: {0}")]
    Incompatible(String),

    #[error("unknown measure {0:?}")]
    UnknownMeasure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
