use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("basis mismatch: expected basis {expected:016x}, found {found:016x}")]
    BasisMismatch { expected: u64, found: u64 },

    #[error("singular system in {context} (condition estimate {condition:.3e})")]
    Singular { context: String, condition: f64 },

    #[error("unsupported operator: {0}")]
    Capability(String),

    #[error("degenerate smoother: n^-1 tr(S) = {0} must be < 1")]
    DegenerateSmoother(f64),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
