use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no usable attributes: no word reaches min_frequency {min_frequency}")]
    EmptyVocabulary { min_frequency: usize },

    #[error("annotation references unknown sample id `{0}`")]
    UnknownSample(String),

    #[error("record `{sample_id}` lists attribute `{word}` more than once")]
    DuplicateWord { sample_id: String, word: String },

    #[error("duplicate attribute `{0}` in vocabulary")]
    DuplicateAttribute(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label {label} of sample `{sample_id}` outside 1..={num_classes}")]
    LabelOutOfRange { sample_id: String, label: usize, num_classes: usize },

    #[error("class {0} has no training samples")]
    EmptyClass(usize),

    #[error("accuracy is undefined on an empty sample set")]
    EmptySampleSet,

    #[error("non-finite loss {loss} at epoch {epoch}; learning rate too high?")]
    NonFiniteLoss { epoch: usize, loss: f64 },

    #[error("insufficient feature dimension: need at least {needed}, got {got}")]
    InsufficientDimension { needed: usize, got: usize },

    #[error("insufficient points: {points} points for {k} clusters")]
    InsufficientPoints { points: usize, k: usize },

    #[error("no attribute coverage in validation")]
    NoValidationCoverage,

    #[error("sample `{0}` carries no group label")]
    MissingGroup(String),

    #[error("head width {width} is not a multiple of {num_classes} classes")]
    HeadMismatch { width: usize, num_classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("I/O error on {path}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
