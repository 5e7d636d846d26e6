use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("storage error at {key}: {detail}")]
    Storage { key: String, detail: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("registration failed: {0}")]
    Registration(String),

    #[error("operator contract violated: {0}")]
    Contract(String),

    #[error("singular normal matrix: {0}")]
    Singular(String),

    #[error("no slices left to evaluate")]
    EmptyReport,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI error payload.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Range(_) => "range",
            Error::Storage { .. } => "storage",
            Error::Conflict(_) => "conflict",
            Error::Config(_) => "config",
            Error::Registration(_) => "registration",
            Error::Contract(_) => "contract",
            Error::Singular(_) => "singular",
            Error::EmptyReport => "empty_report",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn storage(key: impl ToString, detail: impl ToString) -> Self {
        Error::Storage {
            key: key.to_string(),
            detail: detail.to_string(),
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidInput(format!($($arg)*)) };
}
pub(crate) use invalid;
