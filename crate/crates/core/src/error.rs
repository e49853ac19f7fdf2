use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl Error {
    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to I/O failures or caller misuse.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::Record { .. } | Error::Data(_) | Error::Format(_))
    }
}
