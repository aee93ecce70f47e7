use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// [`Error::category`] groups variants into the coarse classes the command
/// line maps onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("zero-norm vector passed to {0}")]
    ZeroVector(&'static str),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("matrix is not symmetric (max |S - S^T| = {max_asymmetry:e})")]
    SymmetryViolation { max_asymmetry: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("non-finite function value at probe {coordinate} ({direction}h)")]
    ProbeFailure { coordinate: usize, direction: char },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("non-finite gradient for parameter `{param}` ({count} bad entries)")]
    NonFiniteGradient { param: String, count: usize },
    #[error("{}:{line}: parse error: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: format error: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("bad magic/version: {0}")]
    ModelFormat(String),
    #[error("label error: {0} is not in {{0, 1}}")]
    Label(i64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("retriable ConceptNet failure: {0}")]
    Retriable(String),
    #[error("malformed ConceptNet response for `{term}`: {msg}")]
    Response { term: String, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse failure classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    /// Malformed configuration, files or model headers.
    Format,
    /// Missing, empty or invalid datasets.
    Data,
    /// Numerical breakdown during training or linear algebra.
    Numerical,
    /// Transient network failures.
    Network,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Parse { .. }
            | Error::Format { .. }
            | Error::ModelFormat(_)
            | Error::Config(_)
            | Error::Response { .. } => Category::Format,
            Error::Data(_) | Error::Label(_) | Error::EmptyInput(_) | Error::Io { .. } => Category::Data,
            Error::Retriable(_) => Category::Network,
            Error::Shape { .. }
            | Error::ZeroVector(_)
            | Error::InsufficientSamples { .. }
            | Error::SymmetryViolation { .. }
            | Error::Numerical(_)
            | Error::ProbeFailure { .. }
            | Error::NonFiniteGradient { .. } => Category::Numerical,
        }
    }
}
