use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ridge function: {0}")]
    InvalidRidge(String),

    #[error("invalid threshold pair ({s1}, {s2}): {reason}")]
    InvalidThreshold { s1: f64, s2: f64, reason: String },

    #[error("invalid input history: {0}")]
    InvalidInput(String),

    #[error("time {t} outside recorded history [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("refinement level {level} exceeds cap {max}")]
    LevelTooDeep { level: usize, max: usize },

    #[error("level mismatch: {0}")]
    LevelMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("time must be nondecreasing: got {t_new} after {t_last}")]
    NonMonotoneTime { t_last: f64, t_new: f64 },

    #[error("non-finite value detected at t = {t}")]
    NaNDetected { t: f64 },

    #[error("multistep step needs {needed} derivative values, have {have}")]
    StartupUnderflow { needed: usize, have: usize },

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa})")]
    NotHurwitz { abscissa: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("run diverged: {0}")]
    RunDiverged(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
