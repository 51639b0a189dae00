use std::path::PathBuf;

use lshr_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LshrError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// Image or tensor extents that do not fit the pipeline.
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {detail}")]
    Image { path: PathBuf, detail: String },

    /// Malformed or unsupported file content.
    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("incomplete measurement frame: {} missing entries, first {:?}", missing.len(), missing.iter().take(8).collect::<Vec<_>>())]
    IncompleteFrame {
        /// `(pattern_index, block_row, block_col)` triples absent from the file.
        missing: Vec<(usize, usize, usize)>,
    },

    #[error("duplicate measurement entry for pattern {pattern} block ({row}, {col})")]
    DuplicateEntry { pattern: usize, row: usize, col: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value at step {step} in {tensor}")]
    NonFinite { step: u64, tensor: String },
}

impl LshrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LshrError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, LshrError>;
