use thiserror::Error;

/// Errors produced across the cascade, attack, and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad spec, bad profile, bad parameters).
    #[error("configuration error: {0}")]
    Config(String),

    /// Internal consistency violation (trace/spec mismatch, unpaired records).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A planted-fixture target cannot be realized at the requested corpus size.
    #[error("construction error: {0}")]
    Construction(String),

    /// A stage model failed during evaluation (remote stages, mostly).
    #[error("stage error [{endpoint}]: {message}")]
    Stage { endpoint: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn integrity(msg: impl Into<String>) -> Self {
        Error::Integrity(msg.into())
    }

    pub fn construction(msg: impl Into<String>) -> Self {
        Error::Construction(msg.into())
    }
}
