use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record `{id}`: {message}")]
    Dimension { id: String, message: String },

    #[error("record `{id}`: gold label {label} at step {step} is outside [0, {classes})")]
    LabelRange {
        id: String,
        step: usize,
        label: i64,
        classes: usize,
    },

    #[error("record `{id}` has {found} classes but the dataset has {expected}")]
    ClassCountMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss requested for a masked token")]
    MaskedToken,

    #[error("record `{id}` has no unmasked tokens")]
    FullyMasked { id: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("metric `{metric}` unavailable: {reason}")]
    Unavailable { metric: String, reason: String },

    #[error("numerical fault: {0}")]
    NumericalFault(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("statistic undefined: {0}")]
    Undefined(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("Cholesky factorization of class {class} covariance failed after {doublings} jitter doublings")]
    Cholesky { class: usize, doublings: u32 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line frontend: 1 for usage and
    /// configuration problems, 2 for anything wrong with the data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            _ => 2,
        }
    }
}
