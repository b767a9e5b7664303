use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing input {}: {reason}", path.display())]
    MissingInput { path: PathBuf, reason: String },

    #[error("invalid config `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    #[error(transparent)]
    Core(#[from] qorseek_core::Error),

    #[error("i/o on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_INVALID_CONFIG: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

impl CliError {
    pub fn missing(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CliError::MissingInput { path: path.into(), reason: reason.into() }
    }

    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::InvalidConfig { key: key.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput { .. } => EXIT_MISSING_INPUT,
            CliError::InvalidConfig { .. } => EXIT_INVALID_CONFIG,
            CliError::Core(_) | CliError::Io { .. } | CliError::Json(_) => EXIT_INTERNAL,
        }
    }
}
