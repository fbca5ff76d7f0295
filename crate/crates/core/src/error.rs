use thiserror::Error;

/// Errors raised by grid construction, solvers and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid dimension {0}: expected 1, 2 or 3")]
    InvalidDimension(usize),

    #[error("invalid grid spacing {0}: must be positive and finite")]
    InvalidSpacing(f64),

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("fields live on different grid domains")]
    DomainMismatch,

    #[error("field value missing at cell {0}")]
    MissingValue(usize),

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("energy increased within continuation level eps = {eps:e} ({before:e} -> {after:e})")]
    EnergyIncrease { eps: f64, before: f64, after: f64 },

    #[error("ball of radius {radius} around {center:?} leaves the domain")]
    BallExitsDomain { center: Vec<f64>, radius: f64 },

    #[error("radius {radius} below resolution floor {floor}")]
    UnderResolved { radius: f64, floor: f64 },

    #[error("point {0:?} is not on the free boundary")]
    NotOnFreeBoundary(Vec<f64>),

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("negative value {value:e} at {point:?} where a nonnegative field is required")]
    Negative { point: Vec<f64>, value: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for LabError {
    fn from(err: std::io::Error) -> Self {
        LabError::Io(err.to_string())
    }
}

impl From<serde_json::Error> for LabError {
    fn from(err: serde_json::Error) -> Self {
        LabError::Format(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
