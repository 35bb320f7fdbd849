use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid surface: {0}")]
    InvalidSurface(String),
    #[error("unsupported spline half-order q = {0} (supported: 1..=3, 4 with the experimental flag)")]
    UnsupportedOrder(usize),
    #[error("negative delay {0}")]
    NegativeDelay(f64),
    #[error("history too short: need {needed} samples, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("coincident source and target (r = 0) at source node {0}")]
    CoincidentPoints(usize),
    #[error("near-singular pivot {value:e} at index {index}")]
    SingularPivot { index: usize, value: f64 },
    #[error("target {0:?} is too close to the surface for the smooth rule")]
    TargetTooClose([f64; 3]),
    #[error("estimated operator memory {estimate} bytes exceeds cap {cap} bytes")]
    MemoryCap { estimate: u64, cap: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("operator cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
