use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad or missing configuration (columns, flags, credentials, prompt inputs).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a corpus contract.
    #[error("data error: {0}")]
    Data(String),

    /// The chat endpoint could not be reached or kept failing.
    #[error("transport error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },

    /// A debate or prompt was requested out of protocol order.
    #[error("orchestration error: {0}")]
    Orchestration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
