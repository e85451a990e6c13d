use thiserror::Error;

/// Errors raised by tensor construction, graph building and optimization.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("backward needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
