use thiserror::Error;

/// Errors produced by the adapter library.
#[derive(Debug, Error)]
pub enum SboraError {
    #[error("invalid rank: r={rank} is not in 1..={dim}")]
    InvalidRank { rank: usize, dim: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("adapter kind mismatch: expected {expected}, got {actual}")]
    KindMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("orthogonality violation: basis index {index} is shared by adapters {first} and {second}")]
    Orthogonality {
        index: usize,
        first: usize,
        second: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SboraError> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> SboraError {
    SboraError::Dimension(msg.into())
}
