use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("unknown domain kind {0}")]
    UnknownKind(String),
    #[error("unknown corruption {0}")]
    UnknownCorruption(String),
    #[error("corruption severity {0} out of range 1..=3")]
    BadSeverity(u8),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("all pixels ignored, metric undefined")]
    AllIgnored,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
