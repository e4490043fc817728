use thiserror::Error;

/// Errors shared across the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("need at least two environments")]
    NeedMultipleEnvironments,

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("assignment problem has no finite-cost solution")]
    Infeasible,

    #[error("model assumptions violated: {0}")]
    ModelAssumptionsViolated(String),

    #[error("exact cycle enumeration limited to {limit} variables, got {p}")]
    TooLargeForExact { p: usize, limit: usize },

    #[error("no estimate available: {0}")]
    EstimateUnavailable(String),

    #[error("network generation failed: {0}")]
    GenerationFailed(String),

    #[error("stability selection failed: {failed} of {runs} subsample runs unusable")]
    StabilityFailed { failed: usize, runs: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
