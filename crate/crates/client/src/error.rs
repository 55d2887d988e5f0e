use thiserror::Error;

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("API key environment variable '{env}' is not set")]
    MissingApiKey { env: String },

    #[error("authentication failed with HTTP status {status}")]
    Auth { status: u16 },

    #[error("collection incomplete: {collected} of {expected} completions; journal retained for resume")]
    Incomplete { collected: usize, expected: usize },

    #[error("journal line {line}: {reason}")]
    Journal { line: usize, reason: String },

    #[error("journal at '{path}' was written for a different configuration: {reason}")]
    JournalMismatch { path: String, reason: String },

    #[error(transparent)]
    Core(#[from] eqtest_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
