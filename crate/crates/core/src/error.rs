use thiserror::Error;

/// Everything that can go wrong in this crate funnels into one enum so the
/// CLI can map error classes onto exit codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("parameter {0:?} is not connected to the loss (no gradient recorded)")]
    Disconnected(String),

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch} (lr {lr})")]
    Numeric { epoch: usize, batch: usize, lr: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
