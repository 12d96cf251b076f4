use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition or type invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("location `{name}` at ({lat}, {lon}) lies outside the grid")]
    OutOfDomain { name: String, lat: f64, lon: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate key {key} at line {line}")]
    DuplicateKey { key: String, line: usize },

    #[error("non-constant time step: {0}")]
    NonConstantStep(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("missing header key `{0}`")]
    MissingKey(String),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("fewer observations ({rows}) than design columns ({cols})")]
    Underdetermined { rows: usize, cols: usize },

    #[error("zero variance in `{0}`")]
    ZeroVariance(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "lead {lead}h is not reachable from intervals {intervals:?}; feasible leads: {feasible:?}"
    )]
    UnreachableLead {
        lead: usize,
        intervals: Vec<usize>,
        feasible: Vec<usize>,
    },

    #[error("non-finite loss at {0}")]
    NanLoss(String),

    #[error("coverage hole: missing lead {0}h")]
    Coverage(String),

    #[error("missing key {0}")]
    MissingEntry(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a prefix naming where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True when the failure is attributable to user input rather than the
    /// environment or a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { .. } | Error::NanLoss(_) => false,
            Error::Context { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}
