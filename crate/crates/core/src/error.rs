use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: channel {channel} out of range ({columns} columns)")]
    ChannelOutOfRange {
        path: PathBuf,
        line: usize,
        channel: usize,
        columns: usize,
    },
    #[error("unknown bearing id `{0}`")]
    UnknownBearing(String),
    #[error("no snapshot files for bearing `{0}`")]
    EmptyStream(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid synthetic spec: {0}")]
    SynthSpec(String),
    #[error("window has {0} samples, at least 4 required")]
    TooFewSamples(usize),
    #[error("zero-variance window: kurtosis and skewness undefined")]
    ZeroVariance,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate variance in feature {0}")]
    DegenerateVariance(usize),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("normalizer has not been fitted")]
    UnfittedNormalizer,
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),
    #[error("fixed-point format mismatch: {0:?} vs {1:?}")]
    FormatMismatch(crate::fixedpoint::FixedFormat, crate::fixedpoint::FixedFormat),
    #[error("NaN cannot be quantized")]
    NanInput,
    #[error("PRBS seed must be nonzero")]
    ZeroSeed,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("output weights are not initialized")]
    UninitializedBeta,
    #[error("singular normal matrix")]
    Singular,
    #[error("OPIUM recursion diverged (non-finite intermediate)")]
    Diverged,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ensemble did not converge within {cap} samples")]
    NotConverged { cap: usize },
    #[error("active count {active} invalid for ensemble of {total} (must be odd, 1..=N)")]
    InvalidActiveCount { active: usize, total: usize },
    #[error("step called after fault was declared")]
    FaultAlreadyDeclared,
    #[error("need at least 2 good-bearing errors, got {0}")]
    TooFewGoodBearings(usize),
    #[error("invalid energy anchors: {0}")]
    Anchors(String),
    #[error("bit width {0} outside 8..=16")]
    BitsOutOfRange(u32),
    #[error("empty monitor log")]
    EmptyLog,
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
