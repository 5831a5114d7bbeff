use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("generation failed: {0}")]
    Generation(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(alloc::format!($($arg)*))
    };
}

pub(crate) use dim_err;
