use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed segment: {0}")]
    MalformedSegment(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("time {t} is outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("blow-up in particle {particle} at step {step}: {detail}")]
    BlowUp {
        particle: usize,
        step: usize,
        detail: String,
    },
    #[error("unsupported coupling: {0}")]
    UnsupportedCoupling(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("sampler exhausted after {0} samples")]
    SamplerExhausted(usize),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
