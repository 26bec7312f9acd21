use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the quantization study pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed manifest {}: {message}", path.display())]
    MalformedManifest { path: PathBuf, message: String },

    #[error("blob length mismatch: expected {expected} bytes, found {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error("blob checksum mismatch: manifest records {expected}, blob hashes to {found}")]
    Checksum { expected: String, found: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("invalid config {} at `{field}`: {message}", file.display())]
    Config {
        file: PathBuf,
        field: String,
        message: String,
    },

    #[error("missing artifact {}: run `{stage}` first", path.display())]
    MissingStage { stage: &'static str, path: PathBuf },

    #[error("artifact {} was produced by a different config: rerun `{stage}`", path.display())]
    StaleArtifact { stage: &'static str, path: PathBuf },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
