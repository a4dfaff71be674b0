//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("metaimage header: {0}")]
    Header(String),

    #[error("data length mismatch: header declares {expected} samples, file holds {actual}")]
    DataLengthMismatch { expected: usize, actual: usize },

    #[error("unsupported element type {0}")]
    UnsupportedElementType(String),

    #[error("non-finite sample at linear index {0}")]
    NonFiniteSample(usize),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty selection")]
    EmptySelection,

    #[error("zero in-bounds mass: moving image does not overlap the sampled voxels")]
    ZeroInBoundsMass,

    #[error("infeasible constraint: {0}")]
    Infeasible(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
