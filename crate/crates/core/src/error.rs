use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{feature}: value {value} outside support [{lo}, {hi})")]
    OutOfSupport {
        feature: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("index {index} out of range for {len} bins")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("vocabulary manifest mismatch: checkpoint expects {expected}, got {found}; use the vocabulary the checkpoint was trained with")]
    ManifestMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::ManifestMismatch { .. } => ErrorKind::Config,
            Error::Numerical(_) => ErrorKind::Numerical,
            Error::InvalidInput(_)
            | Error::OutOfSupport { .. }
            | Error::IndexOutOfRange { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_) => ErrorKind::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
