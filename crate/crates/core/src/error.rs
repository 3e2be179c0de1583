use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model has no output units")]
    EmptyHead,

    #[error("label {0} is not registered in the model head")]
    UnknownClass(usize),

    #[error("class {0} is already registered in the model head")]
    DuplicateClass(usize),

    #[error("pseudo-context {0} is not registered in memory")]
    UnknownPc(usize),

    #[error("pseudo-context {0} is already registered in memory")]
    DuplicatePc(usize),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant breach at stream index {index}: {msg}")]
    InvariantBreach { index: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
