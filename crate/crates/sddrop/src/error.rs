//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} expects {expected} operand(s), got {got}")]
    ArityMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("log domain error: input {value} at flat index {index} is not positive")]
    LogDomain { value: f64, index: usize },

    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("finite differences: non-finite objective at coordinate {coordinate}")]
    NonFiniteObjective { coordinate: usize },

    #[error("invalid argument for {what}: {why}")]
    InvalidArgument { what: &'static str, why: String },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("posterior row {row} sums to {sum}, expected 1 within {tolerance}")]
    NotNormalized {
        row: usize,
        sum: f64,
        tolerance: f64,
    },

    #[error("gradient for parameter `{name}` is non-finite; run aborted")]
    NonFiniteGradient { name: String },

    #[error("loss diverged (non-finite) at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
