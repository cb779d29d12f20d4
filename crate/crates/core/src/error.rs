use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("dataset integrity error: missing or mismatched entries: {}", .0.join(", "))]
    Integrity(Vec<String>),

    #[error("unsupported problem: {0}")]
    Unsupported(String),

    #[error("generation retries exhausted after {attempts} attempts: {reason}")]
    GenerationExhausted { attempts: usize, reason: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("failed to load weights for layer `{layer}`: {message}")]
    WeightLoad { layer: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Format { .. }
                | Error::Integrity(_)
                | Error::Unsupported(_)
                | Error::Contract(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
