use thiserror::Error;

/// Errors raised by the library. Contract violations carry enough context
/// to identify the offending argument.
#[derive(Debug, Error)]
pub enum MeeeError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("action {action:?} outside box [{low:?}, {high:?}]")]
    ActionOutOfBounds {
        action: Vec<f64>,
        low: Vec<f64>,
        high: Vec<f64>,
    },

    #[error("weight {0} outside [0.5, 1.0]")]
    WeightOutOfRange(f64),

    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,

    #[error("insufficient data: need at least {needed} transitions, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("Riccati iteration did not converge after {0} iterations")]
    NonConvergence(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MeeeError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(MeeeError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
