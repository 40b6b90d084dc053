use thiserror::Error;

/// Errors raised across the pipeline. The CLI maps each variant to an exit code.
#[derive(Debug, Error)]
pub enum GainError {
    /// Malformed or inconsistent input data (files, tags, labels).
    #[error("data error: {0}")]
    Data(String),
    /// Invalid configuration values.
    #[error("config error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition (shapes, stages, missing gradients).
    #[error("contract error: {0}")]
    Contract(String),
    /// NaN/Inf encountered during training or checking.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GainError>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::GainError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
