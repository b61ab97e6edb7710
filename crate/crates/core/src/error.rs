use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the command line to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty silhouette")]
    EmptySilhouette,

    #[error("insufficient neighbors: need {needed}, have {available}")]
    InsufficientNeighbors { needed: usize, available: usize },

    #[error("grid/camera mismatch: no voxel projects into the {width}x{height} image")]
    GridCameraMismatch { width: usize, height: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate basis (reduce m): {0}")]
    DegenerateBasis(String),

    #[error("non-finite {what}: {detail}")]
    NonFinite { what: String, detail: String },

    #[error("step size too large: energy {energy:.6e} exceeds 10x the initial {initial:.6e}")]
    StepTooLarge { energy: f64, initial: f64 },

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed {format} file {path}: {message}")]
    Format { format: &'static str, path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } => ErrorClass::Usage,
            Error::DegenerateBasis(_) | Error::NonFinite { .. } | Error::StepTooLarge { .. } => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }
}
