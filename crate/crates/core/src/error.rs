use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = XcnnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum XcnnError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl XcnnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        XcnnError::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::XcnnError::InvalidShape(format!($($arg)*)) };
}

macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::error::XcnnError::Contract(format!($($arg)*)) };
}

pub(crate) use contract_err;
pub(crate) use shape_err;
