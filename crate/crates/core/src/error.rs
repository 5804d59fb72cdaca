use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {width}x{height}: {reason}")]
    InvalidDimensions {
        width: usize,
        height: usize,
        reason: &'static str,
    },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("value {value} at cell {index} is below the positivity floor {floor}")]
    Domain {
        index: usize,
        value: f64,
        floor: f64,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "degenerate observation system (gradient energy {energy:.3e}, condition {condition:.3e})"
    )]
    DegenerateSystem { energy: f64, condition: f64 },

    #[error("singular Jacobian diagonal at cell {index} (|J| = {value:.3e})")]
    SingularDiagonal { index: usize, value: f64 },

    #[error("singular linear system")]
    SingularSystem,

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated data in {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("frame index {index} out of range (sequence has {count} frames)")]
    FrameOutOfRange { index: usize, count: usize },

    #[error("malformed loss mask {path}: {reason}")]
    MalformedMask { path: PathBuf, reason: String },

    #[error("intra frame {frame} has lost macroblocks; intra concealment is not supported")]
    IntraLoss { frame: usize },

    #[error("{0}")]
    Input(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
