use thiserror::Error;

/// Errors raised by tensor construction and kernel evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {context} (lhs {lhs:?}, rhs {rhs:?})")]
    ShapeMismatch {
        op: &'static str,
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: dimension {dim} of size {size} is not divisible by {divisor}")]
    NotDivisible {
        op: &'static str,
        dim: &'static str,
        size: usize,
        divisor: usize,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: &'static str },

    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;
