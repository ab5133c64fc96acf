//! Errors with a stable category and exit code for scripted callers.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}, line {line}: {reason}")]
    Parse { path: PathBuf, line: u64, reason: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] tpjm_core::error::Error),
    #[error("{0}")]
    Format(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        use tpjm_core::error::Error as E;
        match self {
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Format(_) => "format",
            CliError::Model(e) => match e {
                E::UnknownCovariate(_) | E::InvalidSpec(_) => "config",
                E::InvalidData { .. } => "data",
                E::InnerNotConverged(_) | E::ModeSearchFailed(_) => "convergence",
                _ => "numeric",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "io" => 3,
            "parse" => 4,
            "config" => 5,
            "data" => 6,
            "convergence" => 7,
            "numeric" => 8,
            _ => 9,
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": { "category": self.category(), "message": self.to_string() } }).to_string()
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
