use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("invalid floor plan: {0}")]
    InvalidPlan(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed token sequence at index {index}: {reason}")]
    MalformedTokens { index: usize, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint tensor `{name}`: {reason}")]
    Checkpoint { name: String, reason: String },

    #[error("origin cell ({row}, {col}) is occupied")]
    OriginBlocked { row: usize, col: usize },

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
