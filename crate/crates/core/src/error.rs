use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, hyperparameters or layer wiring that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller-supplied data that violates an operation's precondition.
    #[error("input error: {0}")]
    Input(String),

    /// A file on disk does not follow the expected layout.
    #[error("format error in {}: {message}", file.display())]
    Format { file: PathBuf, message: String },

    /// NaN/Inf showed up where a finite value was required.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An object was used before it was ready (e.g. no weights loaded).
    #[error("state error: {0}")]
    State(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn format_err(file: impl Into<PathBuf>, msg: impl Into<String>) -> Error {
    Error::Format {
        file: file.into(),
        message: msg.into(),
    }
}
