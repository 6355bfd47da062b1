use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: truncation needs at least {min} levels")]
    InvalidDimension { dim: usize, min: usize },

    #[error("truncation risk: {what} needs dim >= {needed}, got {dim}")]
    TruncationRisk { what: String, needed: usize, dim: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("bad subsystem index {0} (0 = phonon, 1 = field)")]
    BadSubsystem(usize),

    #[error("phonon number {m} is out of support (P = {weight:e})")]
    OutOfSupport { m: usize, weight: f64 },

    #[error("grid does not cover the state: {0}")]
    Coverage(String),

    #[error("degenerate record: {0}")]
    DegenerateRecord(String),

    #[error("time stepping did not converge: step-doubling infidelity {infidelity:e}")]
    StepConvergence { infidelity: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
