use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("recording too short: {samples} samples, window needs {window}")]
    RecordingTooShort { samples: usize, window: usize },

    #[error("invalid sample: non-finite value at index {index}")]
    InvalidSample { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix not SPD: {0}")]
    NotSpd(String),

    #[error("matrix not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class without samples: {0}")]
    EmptyClass(usize),

    #[error("degenerate scatter: {0}")]
    DegenerateScatter(String),

    #[error("singular covariance for class {0}")]
    SingularCovariance(usize),

    #[error("empty prototype set")]
    EmptyPrototypes,

    #[error("insufficient calibration data: {got} distances, need at least {need}")]
    InsufficientCalibration { got: usize, need: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("metric {metric} is incompatible with extractor {extractor}")]
    IncompatibleMetric { metric: &'static str, extractor: &'static str },

    #[error("malformed manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("missing trial file {0}")]
    MissingTrialFile(PathBuf),

    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("channel mismatch in {path}: expected {expected} channels, found {found}")]
    ChannelMismatch { path: PathBuf, expected: usize, found: usize },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("profile distinctness unreachable after {0} resamples")]
    ProfilesNotDistinct(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
