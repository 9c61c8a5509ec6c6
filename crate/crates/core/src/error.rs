use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate candidate id `{0}`")]
    DuplicateId(String),

    #[error("library contains no candidates")]
    EmptyLibrary,

    #[error("library header declares {declared} candidates but {found} rows were read")]
    DeclaredCount { declared: usize, found: usize },

    #[error("targets have zero spread; cannot normalise")]
    DegenerateScale,

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("candidate pool exhausted")]
    PoolExhausted,

    #[error("kernel matrix is ill-conditioned even with jitter {jitter:e}")]
    IllConditioned { jitter: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numeric failure in layer {layer}: {message}")]
    Numeric { layer: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("worker {worker}: {message}")]
    Worker { worker: usize, message: String },

    #[error("wire protocol error: {0}")]
    Wire(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
