use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("expected a single-channel image, found {channels} channels")]
    MultiChannel { channels: usize },

    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("invalid pixel data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: String, right: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel size must be odd and at least 1, got {0}")]
    EvenKernel(usize),

    #[error("fusion filter depth {filter} does not match {input} concatenated channels")]
    FilterDepth { filter: usize, input: usize },

    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("class vector is not on the probability simplex: {0}")]
    NonSimplex(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value at epoch {epoch} in {parameter}")]
    NumericAbort { epoch: usize, parameter: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(left: (usize, usize), right: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            left: format!("{}x{}", left.0, left.1),
            right: format!("{}x{}", right.0, right.1),
        }
    }
}
