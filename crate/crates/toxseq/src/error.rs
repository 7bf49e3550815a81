//! Crate-wide error type.
//!
//! The CLI maps variants onto its exit-code taxonomy via [`Error::exit_code`]:
//! 1 = usage error, 2 = data error, 3 = numeric divergence.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // ── tensor / autodiff ───────────────────────────────────────────
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {expected}, got shape {shape:?}")]
    InvalidShape {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("index {index} out of range for {size} rows")]
    IndexOutOfRange { index: usize, size: usize },

    // ── configuration ───────────────────────────────────────────────
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    BadSplitRatios([f64; 3]),
    #[error("{0}")]
    Usage(String),

    // ── text / dataset ──────────────────────────────────────────────
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("missing required column '{0}'")]
    MissingColumn(String),
    #[error("line {line}: cannot parse target value '{value}'")]
    BadTarget { line: u64, value: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("split part '{part}' received no records of class {class}")]
    EmptySplitClass { part: &'static str, class: u8 },
    #[error("example has no content tokens")]
    NoContentTokens,
    #[error("vocab: {0}")]
    Vocab(String),

    // ── training ────────────────────────────────────────────────────
    #[error("only class {0} present; both classes are required")]
    SingleClass(u8),
    #[error("missing gradient for parameter '{0}'")]
    MissingGradient(String),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    // ── checkpoint ──────────────────────────────────────────────────
    #[error("checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint: unsupported format version {0}")]
    VersionMismatch(u32),
    #[error("checkpoint: truncated file")]
    Truncated,
    #[error("checkpoint: tensor '{name}' declares dims {dims:?} but carries {count} values")]
    ShapeInconsistency {
        name: String,
        dims: Vec<usize>,
        count: u64,
    },
    #[error("checkpoint: unknown tensor '{0}'")]
    UnknownTensor(String),
    #[error("checkpoint: missing tensor '{0}'")]
    MissingTensor(String),
    #[error("checkpoint header: {0}")]
    Header(String),

    // ── io ──────────────────────────────────────────────────────────
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 1 usage error, 2 data error, 3 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::Config(_)
            | Error::UnknownKey(_)
            | Error::BadSplitRatios(_) => 1,
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
