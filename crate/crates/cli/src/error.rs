use std::path::PathBuf;

use kgorbit_core::KgError;
use serde_json::json;

use crate::output::SCHEMA_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("line {line}: key `{key}`: {reason}")]
    Parse { line: usize, key: String, reason: String },
    #[error("invalid configuration `{key}`: {reason}")]
    Validation { key: String, reason: String },
    #[error(transparent)]
    Core(#[from] KgError),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub(crate) fn parse(line: usize, key: &str, reason: impl Into<String>) -> Self {
        CliError::Parse {
            line,
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn validation(key: &str, reason: impl Into<String>) -> Self {
        CliError::Validation {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "parse_error",
            CliError::Validation { .. } => "validation_error",
            CliError::Core(_) => "runtime_error",
            CliError::Io { .. } => "io_error",
        }
    }

    /// Machine-readable record written to stderr on failure.
    pub fn to_json(&self) -> serde_json::Value {
        let mut rec = json!({
            "schema_version": SCHEMA_VERSION,
            "error": self.kind(),
            "message": self.to_string(),
        });
        match self {
            CliError::Parse { line, key, reason } => {
                rec["line"] = json!(line);
                rec["key"] = json!(key);
                rec["reason"] = json!(reason);
            }
            CliError::Validation { key, reason } => {
                rec["key"] = json!(key);
                rec["reason"] = json!(reason);
            }
            _ => {}
        }
        rec
    }
}
