use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("svd did not converge after {sweeps} sweeps (off-diagonal ratio {residual:e})")]
    SvdNonConvergence { sweeps: usize, residual: f64 },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("unexpected magic for {kind}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        kind: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated idx payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("idx dimensions overflow: {0:?}")]
    DimOverflow(Vec<u32>),

    #[error("label {label} at index {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("dictionary with {terms} terms exceeds cap {cap}")]
    DictionaryTooLarge { terms: u128, cap: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("malformed {kind} file: {reason}")]
    Malformed { kind: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dims(op: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
