use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the input was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Fewer results than the recovery threshold have arrived.
    #[error("not yet recoverable: have {have}, need {need}")]
    NotYetRecoverable { have: usize, need: usize },
    /// The job can never be recovered with the given resources.
    #[error("unrecoverable: {0}")]
    Unrecoverable(String),
    #[error("worker {worker} panicked: {message}")]
    WorkerPanic { worker: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
