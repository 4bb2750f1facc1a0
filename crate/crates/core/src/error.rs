use thiserror::Error;

/// Error type shared by every crate in the workspace.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (bad distribution parameters,
    /// malformed config documents, unknown names).
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller violated a documented precondition (shape or name mismatch,
    /// empty inputs).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A computation produced non-finite values or failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A bounded retry loop ran out of attempts.
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
