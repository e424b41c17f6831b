use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("incomplete input: {0}")]
    IncompleteInput(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("index {index} out of range for {what} (len {len})")]
    Range {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("non-finite value in {layer}")]
    NumericOverflow { layer: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged in {phase} phase at epoch {epoch}: {reason}")]
    TrainingFailure {
        phase: String,
        epoch: usize,
        reason: String,
    },

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
