use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("probability {value} out of range [0, 1] at sample {sample}, class {class}")]
    ProbabilityOutOfRange {
        sample: String,
        class: usize,
        value: f64,
    },

    #[error("row for sample {sample} sums to {sum}, outside tolerance")]
    RowSumViolation { sample: String, sum: f64 },

    #[error("unknown class name {0:?}")]
    UnknownClassName(String),

    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),

    #[error("sample sets differ: {0}")]
    SampleSetMismatch(String),

    #[error("class sets differ: {0}")]
    ClassSetMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("class {class} has {count} samples, need at least 2")]
    ClassTooSmall { class: String, count: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("expected {expected} weights, got {got}")]
    WeightLengthMismatch { expected: usize, got: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("need at least 2 models, got {0}")]
    TooFewModels(usize),

    #[error("dimension mismatch: expected width {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("platform energy counters unavailable: {0}")]
    CountersUnavailable(String),

    #[error("power trace exhausted after {0} samples")]
    TraceExhausted(usize),

    #[error("need at least 2 power samples, got {0}")]
    InsufficientSamples(usize),

    #[error("duration must be positive")]
    ZeroDuration,

    #[error("empty session group")]
    EmptyGroup,

    #[error("unsupported report format {0:?}")]
    UnsupportedFormat(String),

    #[error("no manifest in {0}")]
    ManifestMissing(PathBuf),

    #[error("manifest checksum mismatch for {0}")]
    ChecksumMismatch(PathBuf),

    #[error("output directory {0} exists and is not a previous run")]
    OutputDirOccupied(PathBuf),

    #[error("cannot read input {path}: {source}")]
    InputUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn unreadable(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::InputUnreadable {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::MalformedFile {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::CountersUnavailable(_)
                | Error::TraceExhausted(_)
                | Error::ChecksumMismatch(_)
        )
    }

    /// Process exit code used by the CLI: 2 for input validation, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            2
        } else {
            3
        }
    }
}
