use thiserror::Error;

use crate::operator::HilbertLayout;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("layout mismatch: {left} vs {right}")]
    LayoutMismatch {
        left: HilbertLayout,
        right: HilbertLayout,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error(
        "positivity violated at step {step} (t = {time:.6}): min eigenvalue {min_eig:.3e} below {threshold:.1e}; \
         reduce the step size (dt = {dt:.3e})"
    )]
    PositivityViolation {
        step: usize,
        time: f64,
        dt: f64,
        min_eig: f64,
        threshold: f64,
    },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("{failed} of {total} trajectories failed (seeds {seeds:?}): {first}")]
    EnsembleFailed {
        failed: usize,
        total: usize,
        seeds: Vec<u64>,
        first: String,
    },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
