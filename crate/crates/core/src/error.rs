use thiserror::Error;

/// Errors raised across the control stack.
#[derive(Debug, Error)]
pub enum TidalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported parameter: {0}")]
    Unsupported(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TidalError>;

pub(crate) fn config_err(msg: impl Into<String>) -> TidalError {
    TidalError::Config(msg.into())
}
