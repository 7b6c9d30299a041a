use std::io;

/// Errors produced by the core toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Array or matrix shapes did not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A binary or text payload could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed input that fails a semantic check (e.g. a detection
    /// referring to a frame that does not exist).
    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
