use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Invalid or incomplete configuration; maps to exit code 2.
    #[error("config: {0}")]
    Config(String),
    /// Training diverged (non-finite loss); maps to exit code 3.
    #[error("training diverged at iteration {iter}")]
    Divergence { iter: u64 },
    #[error(transparent)]
    Core(#[from] instcal_core::Error),
    #[error(transparent)]
    Data(#[from] instcal_data::DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
