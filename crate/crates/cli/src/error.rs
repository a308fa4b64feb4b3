use thiserror::Error;

use phaseless::error::{CheckpointError, DatasetError, TrainingError};

/// Failure classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("incompatible inputs: {0}")]
    Compatibility(String),
    #[error("missing prerequisite: {0}")]
    Dependency(String),
    #[error("computation failed: {0}")]
    Compute(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Dependency(_) => 3,
            CliError::Compatibility(_) => 4,
            CliError::Compute(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Dependency(m) => CliError::Dependency(m),
            TrainingError::Parameter(m) => CliError::Compatibility(m),
            TrainingError::Io(e) => CliError::Io(e),
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(e) => CliError::Io(e),
            DatasetError::Parameter(m) => CliError::Validation(m),
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Mismatch(m) => CliError::Compatibility(m),
            other => CliError::Compute(other.to_string()),
        }
    }
}
