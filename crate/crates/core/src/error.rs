use std::path::PathBuf;

/// Errors produced anywhere in the segmentation and localization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header {path}: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("data size mismatch: header implies {expected} bytes, found {found}")]
    DataSizeMismatch { expected: usize, found: usize },
    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("weight manifest: {0}")]
    Manifest(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no catheter found: {0}")]
    NoCatheter(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
