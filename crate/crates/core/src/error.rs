use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CgtError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("tokenizer error: {0}")]
    Tokenizer(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CgtError {
    /// True for failures caused by numeric blow-up (NaN/Inf) rather than bad data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, CgtError::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, CgtError>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::CgtError::Shape(format!($($arg)*)) };
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::CgtError::InvalidInput(format!($($arg)*)) };
}

pub(crate) use invalid;
pub(crate) use shape_err;
