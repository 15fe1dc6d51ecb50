use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum GlenError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("segment {0} is empty")]
    EmptySegment(usize),

    #[error("segment ids must be contiguous and nondecreasing (position {0})")]
    NonContiguousSegments(usize),

    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("embedding dimension {found} at {path}:{line}, expected {expected}")]
    EmbeddingDim {
        path: PathBuf,
        line: usize,
        found: usize,
        expected: usize,
    },

    #[error("label {0} is not covered by the label map")]
    UnmappedLabel(u32),

    #[error("tokens not in vocabulary: {0:?}")]
    UnknownTokens(Vec<String>),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GlenError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GlenError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        GlenError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GlenError>;
