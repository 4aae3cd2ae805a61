use std::io;

use thiserror::Error;

/// Errors raised by the fusion engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ray does not intersect the scene bounding box")]
    RayMissesBbox,
    #[error("point lies behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("depth must be positive, got {0}")]
    NonpositiveDepth(f64),
    #[error("no views retained after visibility filtering")]
    NoViewsRetained,
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("frame not normalized at pixel ({x}, {y}): channel sum {sum}")]
    NotNormalized { x: usize, y: usize, sum: f64 },
    #[error("feature channel mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("non-finite loss at iteration {iteration}: L_o={ce}, L_RGB={rgb}")]
    NanLoss { iteration: usize, ce: f64, rgb: f64 },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error class: 2 for validation, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NanLoss { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
