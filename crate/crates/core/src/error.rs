use std::path::PathBuf;

use edl_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EdlError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {len} categories")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("label sets overlap on {0:?}")]
    OverlappingLabels(Vec<u32>),

    /// A training-phase precondition or freeze contract was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Malformed input files: IDX images/labels and risk-matrix CSV.
#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("IDX file truncated: needs {expected} bytes, has {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid risk matrix: {0}")]
    RiskMatrix(String),

    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checkpoint has {found} classes, expected {expected}")]
    Classes { expected: usize, found: usize },

    #[error("malformed checkpoint metadata: {0}")]
    Metadata(String),
}

pub type Result<T> = std::result::Result<T, EdlError>;

pub(crate) fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> EdlError {
    let path = path.into();
    move |source| EdlError::Io { path, source }
}
