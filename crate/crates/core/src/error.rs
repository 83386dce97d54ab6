use std::path::PathBuf;

use crate::gateway::GatewayError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("marker encoding failed: {0}")]
    Encode(String),

    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),

    #[error("cosine similarity undefined for an all-zero vector")]
    ZeroVector,

    #[error("token budget exceeded: {counted} > {limit}")]
    Budget { counted: usize, limit: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("all {failed} backend request(s) failed; first error: {first}")]
    Backend { failed: usize, first: String },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Io { .. } => "io",
            Error::Encode(_) => "encode",
            Error::DimensionMismatch(..) | Error::ZeroVector => "embedding",
            Error::Budget { .. } => "budget",
            Error::Config(_) => "config",
            Error::Gateway(_) | Error::Backend { .. } => "backend",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Gateway(GatewayError::Auth { .. }) => 1,
            Error::Gateway(_) | Error::Backend { .. } => 3,
            _ => 2,
        }
    }
}
