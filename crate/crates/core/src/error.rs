//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label out of range: {0}")]
    LabelOutOfRange(String),

    #[error("not a probability distribution: {0}")]
    NotOnSimplex(String),

    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated file at byte offset {offset}")]
    Truncated { offset: u64 },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("parse error at {location}: {detail}")]
    Parse { location: String, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("gradient check: non-finite perturbation at input {input}, coordinate ({row}, {col})")]
    NonFinitePerturbation {
        input: usize,
        row: usize,
        col: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
