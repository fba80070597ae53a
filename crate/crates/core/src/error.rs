use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
    #[error("expected {expected} samples, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("unsupported distribution: {0}")]
    UnsupportedDistribution(String),
    #[error("empty sample: {0}")]
    EmptySample(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("separation too small: {0}")]
    SeparationTooSmall(String),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error("no signal direction found: {0}")]
    NoSignal(String),
    #[error("component isolation failed: {0}")]
    IsolateFailed(String),
    #[error("mean placement failed: {0}")]
    Placement(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
