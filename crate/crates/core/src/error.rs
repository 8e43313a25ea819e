use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A state or stage became non-finite. `iter` is filled in by the driver.
    #[error("diverged-state error at iter {iter:?} (stage {stage:?}): {reason}")]
    Diverged {
        iter: Option<usize>,
        stage: Option<usize>,
        reason: String,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("unreliable estimate: {0}")]
    UnreliableEstimate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("step-size search failed: {0}")]
    SearchFailed(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn diverged(reason: impl Into<String>) -> Self {
        Error::Diverged {
            iter: None,
            stage: None,
            reason: reason.into(),
        }
    }

    /// Attaches iteration context to a divergence error; other variants pass through.
    pub fn at_iter(self, k: usize) -> Self {
        match self {
            Error::Diverged { stage, reason, .. } => Error::Diverged {
                iter: Some(k),
                stage,
                reason,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
