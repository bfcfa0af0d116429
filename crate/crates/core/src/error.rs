use thiserror::Error;

use crate::prompt_dsl::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not positive semi-definite")]
    NotPositiveSemiDefinite,
    #[error("singular linear system")]
    Singular,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("prompt specification is empty")]
    EmptySpec,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("checkpoint was trained for world {expected}, got world {actual}")]
    WorldMismatch { expected: String, actual: String },
    #[error("checkpoint has not been trained")]
    Untrained,
    #[error("mask is degenerate (constant saliency)")]
    DegenerateMask,
    #[error("conflicting clauses for attribute {0}")]
    ConflictingSpecs(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("unsupported checkpoint format {0:?}")]
    UnknownFormat(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
