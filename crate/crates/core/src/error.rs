use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice size L = {0}: need L >= 2")]
    InvalidSize(usize),

    #[error("edge pair ({0}, {0}) is not a pair of distinct edges")]
    SameEdge(usize),

    #[error("edge index {index} out of range (lattice has {count} edges)")]
    EdgeOutOfRange { index: usize, count: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("cumulant undefined: second moment of m_phi is zero")]
    UndefinedCumulant,

    #[error("histogram counter overflow: {0}")]
    CounterOverflow(String),

    #[error("size guard: {what} needs {needed} entries, limit is {limit}")]
    SizeGuard {
        what: &'static str,
        needed: f64,
        limit: f64,
    },

    #[error("memory budget exceeded: need {needed} bytes, budget is {budget} bytes")]
    MemoryBudget { needed: u64, budget: u64 },

    #[error("too few points: {0}")]
    TooFewPoints(String),

    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("no interior peak: maximum sits at the {0} of the series")]
    BoundaryMaximum(&'static str),

    #[error("no sign change: {0}")]
    NoSignChange(String),

    #[error("no crossing: {0}")]
    NoCrossing(String),

    #[error("missing series: {0}")]
    MissingSeries(String),

    #[error("sweep finished with {} failed cell(s): {}", failed.len(), failed.join("; "))]
    PartialFailure { failed: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
