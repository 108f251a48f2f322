use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument or value is outside the domain the operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// No mask cell reaches the activation threshold.
    #[error("instance mask has no cell above the activation threshold")]
    EmptyMask,

    #[error("only {found} qualifying anchors, need at least {required}")]
    TooFewAnchors { found: usize, required: usize },

    /// Malformed text input; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
