use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

/// Failures of a batch run, each mapped to a documented exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(#[from] mquench::Error),

    #[error("partial results: {0}")]
    Partial(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Partial(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Partial(_) => "partial",
            CliError::Io { .. } => "io",
        }
    }

    pub fn report(&self, command: &str) -> ErrorReport {
        ErrorReport {
            command: command.to_string(),
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

/// Body of `error.json`.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub command: String,
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

/// Validation errors from the library surface as config errors.
pub fn invalid(e: mquench::Error) -> CliError {
    CliError::Config(e.to_string())
}
