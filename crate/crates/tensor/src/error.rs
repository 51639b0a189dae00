use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes do not fit the operation.
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Parameter outside the operation's domain.
    #[error("{op}: invalid argument: {detail}")]
    Argument { op: &'static str, detail: String },

    /// Misuse of the tape (non-scalar loss, empty tape, foreign handle).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn argument(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Argument {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
