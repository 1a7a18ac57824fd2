use thiserror::Error;

/// Errors raised by the solvers and evaluators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("support exceeds domain: no zero of theta before r = {r_max}")]
    SupportExceedsDomain { r_max: f64 },

    #[error("root bracket not found: {0}")]
    BracketNotFound(String),

    #[error("mass map is not monotone over the bracket: {0}")]
    NonMonotoneMassMap(String),

    #[error("time step {dt} exceeds stability bound {bound}")]
    StabilityViolation { dt: f64, bound: f64 },

    #[error("mass function lost monotonicity at r = {r} (drop {drop:e})")]
    MonotonicityLoss { r: f64, drop: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
