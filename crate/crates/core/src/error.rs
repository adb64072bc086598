use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum MstError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("version error: container version {found}, expected {expected}")]
    Version { found: u16, expected: u16 },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MstError>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::MstError::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
