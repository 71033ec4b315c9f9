use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector at index {index}")]
    ZeroNormVector { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("empty sequence")]
    EmptySequence,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),

    #[error("batch length mismatch: {left} vs {right}")]
    BatchLengthMismatch { left: usize, right: usize },
    #[error("threshold {0} outside [-1, 1]")]
    ThresholdOutOfRange(f64),
    #[error("gold caption index {index} out of range for {rows} captions")]
    UnknownGoldIndex { index: usize, rows: usize },

    #[error("empty batch")]
    EmptyBatch,
    #[error("mask shape {got:?} does not match batch size {expected}")]
    MaskShapeMismatch {
        expected: usize,
        got: (usize, usize),
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("angular margin out of range: {0}")]
    MarginOutOfRange(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFiniteLoss { step: Option<usize> },

    #[error("unknown sentence id {0:?}")]
    UnknownSentenceId(String),
    #[error("missing forward state: {0}")]
    MissingForwardState(&'static str),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("zero-norm row {row} in {path}")]
    ZeroNormRow { path: PathBuf, row: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("inconsistent manifest: {0}")]
    InconsistentManifest(String),

    #[error("unknown configuration key {0:?}")]
    UnknownConfigKey(String),
    #[error("bad value {value:?} for {key}")]
    BadConfigValue { key: String, value: String },

    #[error("gradient check failed for {failed} slot(s)")]
    GradCheckFailed { failed: usize, output: String },

    #[error("{path}: {source}")]
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

    /// Process exit status: 1 for input validation failures, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. }
            | Error::MalformedFile { .. }
            | Error::ZeroNormRow { .. }
            | Error::Io { .. }
            | Error::MissingForwardState(_) => 2,
            _ => 1,
        }
    }

    /// Short stable tag for the machine-readable diagnostic line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroNormVector { .. } => "ZeroNormVector",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NonFiniteInput => "NonFiniteInput",
            Error::EmptySequence => "EmptySequence",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::BatchLengthMismatch { .. } => "BatchLengthMismatch",
            Error::ThresholdOutOfRange(_) => "ThresholdOutOfRange",
            Error::UnknownGoldIndex { .. } => "UnknownGoldIndex",
            Error::EmptyBatch => "EmptyBatch",
            Error::MaskShapeMismatch { .. } => "MaskShapeMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::MarginOutOfRange(_) => "MarginOutOfRange",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::UnknownSentenceId(_) => "UnknownSentenceId",
            Error::MissingForwardState(_) => "MissingForwardState",
            Error::MalformedFile { .. } => "MalformedFile",
            Error::ZeroNormRow { .. } => "ZeroNormRow",
            Error::DuplicateId(_) => "DuplicateId",
            Error::UnknownId(_) => "UnknownId",
            Error::InconsistentManifest(_) => "InconsistentManifest",
            Error::UnknownConfigKey(_) => "UnknownConfigKey",
            Error::BadConfigValue { .. } => "BadConfigValue",
            Error::GradCheckFailed { .. } => "GradCheckFailed",
            Error::Io { .. } => "Io",
        }
    }
}
