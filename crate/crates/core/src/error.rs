use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("example {id}: field `{field}` {message}")]
    Validation {
        id: String,
        field: &'static str,
        message: String,
    },

    #[error("unknown example ids in corrections: {}", .0.join(", "))]
    UnknownIds(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("layer {0} not present in embedding")]
    MissingLayer(i32),

    #[error("missing embeddings for {} key(s), first: {}", .0.len(), .0.first().map(String::as_str).unwrap_or(""))]
    MissingEmbeddings(Vec<String>),

    #[error("duplicate record {0}")]
    Duplicate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("overlapping mention spans: {0}")]
    OverlappingSpans(String),

    #[error("row {row}: zero probability assigned to the true class")]
    ZeroProbability { row: usize },

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit code for the CLI: 2 for validation problems, 3 for missing inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingArtifact(_) | Error::MissingEmbeddings(_) => 3,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 3,
            _ => 2,
        }
    }
}
