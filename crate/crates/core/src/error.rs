use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the model, training loop, or data layer.
#[derive(Debug, Error)]
pub enum VgpError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cholesky factorization failed after jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("non-finite bound at step {step} (batch {batch}): {detail}")]
    NonFinite {
        step: usize,
        batch: usize,
        detail: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, VgpError>;

impl VgpError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            VgpError::Config(_) => 2,
            VgpError::Data(_)
            | VgpError::Shape(_)
            | VgpError::Io { .. }
            | VgpError::Csv { .. }
            | VgpError::Json { .. } => 3,
            VgpError::Domain(_) | VgpError::Factorization { .. } | VgpError::NonFinite { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VgpError::Io {
            path: path.into(),
            source,
        }
    }
}
