use thiserror::Error;

#[derive(Debug, Error)]
pub enum FedniError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error("protocol error from client {client}: {reason}")]
    Protocol { client: usize, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("client has no labeled training nodes")]
    NoLabels,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FedniError>;
