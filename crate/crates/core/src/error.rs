use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; every violation found is listed.
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("ingestion error in {path} at byte offset {offset}: {reason}")]
    Ingest {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("calibration error: {reason} (nearest achievable MI = {nearest_bits:.4} bits)")]
    Calibration { reason: String, nearest_bits: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("schema mismatch in {path}: found version {found}, expected {expected}")]
    Schema {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Domain(_) => 2,
            Error::Data(_) | Error::Ingest { .. } | Error::Shape(_) | Error::Calibration { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Io { .. }
            | Error::Integrity(_)
            | Error::Schema { .. }
            | Error::Csv(_)
            | Error::Json(_) => 5,
        }
    }
}
