use std::io;

use thiserror::Error;

/// Errors raised anywhere in the ranking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("gradient check invalid: {0}")]
    CheckInvalid(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, batch: usize, loss: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
