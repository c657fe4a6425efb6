use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped by the stage that raises them so the CLI can map
/// them onto a message without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // tensor container
    #[error("bad magic in {0}: expected GCT1")]
    BadMagic(PathBuf),
    #[error("truncated tensor file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },
    #[error("non-finite value at flat index {index} in {path}")]
    NonFinite { path: PathBuf, index: usize },
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    // masks and images
    #[error("cannot decode image {path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("mask {0} is not 8-bit grayscale")]
    NotGrayscale(PathBuf),

    // manifest
    #[error("manifest parse error in {path}: {detail}")]
    ManifestParse { path: PathBuf, detail: String },
    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u32),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sample {id:?}: probabilities sum to {sum}, not 1")]
    NotNormalized { id: String, sum: f64 },
    #[error("sample {id:?}: predicted_class {predicted} but argmax(probs) is {argmax}")]
    PredictionMismatch {
        id: String,
        predicted: usize,
        argmax: usize,
    },
    #[error("sample {id:?}: referenced file {path} does not exist")]
    MissingFile { id: String, path: PathBuf },
    #[error("sample {id:?}: {detail}")]
    InvalidRecord { id: String, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
