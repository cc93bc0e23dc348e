use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("iteration did not converge after {sweeps} sweeps (last change {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },
    #[error("linear program for row {row} failed: {reason}")]
    LpFailure { row: usize, reason: String },
    #[error("samples do not span the feature row space; {} direction(s) missing: {missing:?}", missing.len())]
    UnderDetermined { missing: Vec<Vec<f64>> },
    #[error("agent does not support {0} queries")]
    Unsupported(&'static str),
    #[error("malformed agent answer: {0}")]
    MalformedAnswer(String),
    #[error("test certification failed: {0}")]
    Certification(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no test within the size cap of {cap} states")]
    SearchExhausted { cap: usize },
    #[error("unknown built-in environment `{0}`")]
    UnknownEnvironment(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
