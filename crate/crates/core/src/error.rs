use thiserror::Error;

/// Errors surfaced by the simulation, estimation, and training APIs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("input shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("inference produced non-finite values: {0}")]
    NonFinite(String),

    #[error("stale or mismatched cache: {0}")]
    Contract(String),

    #[error("missing prerequisite: {0}")]
    MissingPrerequisite(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
