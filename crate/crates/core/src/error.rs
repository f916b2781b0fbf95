use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum HsiError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("pipeline stage `{stage}` failed: {cause}")]
    Stage { stage: String, cause: String },
}

pub type Result<T> = std::result::Result<T, HsiError>;

impl HsiError {
    pub fn format(msg: impl Into<String>) -> Self {
        HsiError::Format(msg.into())
    }
    pub fn shape(msg: impl Into<String>) -> Self {
        HsiError::Shape(msg.into())
    }
    pub fn invalid(msg: impl Into<String>) -> Self {
        HsiError::InvalidArgument(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        HsiError::Numeric(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        HsiError::Config(msg.into())
    }
}
