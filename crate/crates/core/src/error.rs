use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: unsupported shape {shape:?}")]
    BadShape { op: &'static str, shape: Vec<usize> },

    #[error("{op}: index {index} out of bounds for extent {extent}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("softmax row {row} is fully masked")]
    AllMaskedRow { row: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0} is empty")]
    Empty(String),

    #[error("{0}")]
    Invalid(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("unknown rerank method `{0}` (expected none, mmr or dpp)")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
