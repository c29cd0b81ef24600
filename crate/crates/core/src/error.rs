use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants are grouped by how a caller is expected to react: `Io` is an
/// environment failure, everything else describes bad input or a violated
/// contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("duplicate manifest id {0:?}")]
    DuplicateId(String),

    #[error("class {class} has {available} entries, {requested} requested")]
    InsufficientSamples {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("wav parse error: {0}")]
    WavParse(String),

    #[error("text {name:?} needs {needed} tokens but the context holds {max}")]
    TextTooLong { name: String, needed: usize, max: usize },

    #[error("degenerate feature vector (zero norm)")]
    DegenerateFeature,

    #[error("data error: {0}")]
    Data(String),

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("k = 0 is zero-shot: evaluate the untrained model instead of training")]
    ZeroShotTraining,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the environment rather than of the input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
