use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dim mismatch: header describes {expected} voxels but payload holds {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("unsupported volume format: {0}")]
    Unsupported(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("wrong intensity state: expected {expected}, found {found}")]
    IntensityState {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no body found in volume")]
    NoBody,

    #[error("expected two lung components, found {0}")]
    LungComponents(usize),

    #[error("invalid findings: {0}")]
    InvalidFindings(String),

    #[error("knowledge base: {0}")]
    KnowledgeBase(String),

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("single-class labels: {0}")]
    SingleClass(String),

    #[error("network error for '{scan_ref}': {message}")]
    Network { scan_ref: String, message: String },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("missing output of stage '{stage}': {remedy}")]
    MissingStage { stage: String, remedy: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingStage { .. } => 3,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
            Error::Numeric(_) => 4,
            _ => 2,
        }
    }
}
