use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Row numbers in file errors are 1-based data rows (the header is row 0).
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("{path}: payload truncated: declared {expected} values, found {found}")]
    PayloadTruncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: row {row}: non-finite value in column {column}")]
    NonFiniteValue {
        path: PathBuf,
        row: usize,
        column: String,
    },

    #[error("{path}: row {row}: duplicate sample id {id:?}")]
    DuplicateId {
        path: PathBuf,
        row: usize,
        id: String,
    },

    #[error("{path}: missing required column {column:?}")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}: cannot parse column {column}: {value:?}")]
    ParseField {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("invalid {what}: {detail}")]
    Invalid { what: String, detail: String },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("sample ids not aligned: {detail}")]
    Alignment { detail: String },

    #[error("group {selector} is empty")]
    EmptyGroup { selector: String },

    #[error("group {selector} has {found} samples, needs at least {needed}")]
    GroupTooSmall {
        selector: String,
        needed: usize,
        found: usize,
    },

    #[error("need at least {needed} samples, got {found} ({context})")]
    TooFewSamples {
        needed: usize,
        found: usize,
        context: String,
    },

    #[error("degenerate: no variance")]
    DegenerateVariance,

    #[error("perplexity {perplexity} must be in (1, n); n = {n}")]
    PerplexityOutOfRange { perplexity: f64, n: usize },

    #[error("bandwidth search infeasible: duplicate points at rows {indices:?}")]
    DuplicatePoints { indices: Vec<usize> },

    #[error("p-value out of [0, 1] at index {index}: {value}")]
    PValueOutOfRange { index: usize, value: f64 },

    #[error("empty stratum {stratum:?} (skip_empty is off)")]
    EmptyStratum { stratum: String },

    #[error("label {label:?} has a single class in the training set")]
    SingleClassLabel { label: String },

    #[error("no supervised signal: all labels are missing")]
    NoSupervisedSignal,

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("both classes required ({context})")]
    SingleClass { context: String },

    #[error("no negative samples: cannot calibrate a threshold")]
    NoNegatives,

    #[error("empty sample ({context})")]
    EmptySample { context: String },

    #[error("metric undefined on {dropped} of {total} bootstrap replicates (limit is 50%)")]
    BootstrapUndefined { dropped: usize, total: usize },

    #[error("metric undefined: {detail}")]
    UndefinedMetric { detail: String },

    #[error("config error: {detail}")]
    Config { detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            detail: detail.into(),
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config {
            detail: detail.into(),
        }
    }
}
