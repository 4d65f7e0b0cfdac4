use thiserror::Error;

/// Error type shared across the pipeline.
#[derive(Error, Debug)]
pub enum CsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("mask generation failed: {0}")]
    GenerationFailure(String),

    #[error("numerical failure at cascade {cascade}: {msg}")]
    NumericalFailure { cascade: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dataset integrity error: {0}")]
    Integrity(String),

    #[error("staged-training error: {0}")]
    StagedTraining(String),

    #[error("undefined statistic: {0}")]
    DegenerateStatistic(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CsError>;
