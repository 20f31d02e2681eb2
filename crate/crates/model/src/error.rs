use thiserror::Error;

use evit_tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid configuration: {reason}")]
    Config { reason: String },

    #[error("missing parameter '{name}'")]
    MissingParam { name: String },

    #[error("duplicate parameter '{name}'")]
    DuplicateParam { name: String },

    #[error("checkpoint i/o failed: {0}")]
    CheckpointIo(#[from] evit_tensor::io::IoError),

    #[error("checkpoint does not match configuration: {reason}")]
    CheckpointMismatch { reason: String },
}

impl ModelError {
    pub fn config(reason: impl Into<String>) -> Self {
        ModelError::Config {
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
