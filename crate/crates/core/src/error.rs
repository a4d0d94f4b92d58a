use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time step {dt:e} exceeds the fast-scale limit {limit:e}")]
    StepSize { dt: f64, limit: f64 },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("invariant density unavailable: {0}")]
    DensityUnavailable(String),

    #[error("invariant density is not positive at grid node {node}")]
    NonPositiveDensity { node: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("solver residual {residual:e} above tolerance {tol:e}")]
    Residual { residual: f64, tol: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("corrector extrapolation did not converge (max model residual {0:e})")]
    NonConvergence(f64),

    #[error("unsupported event for this operation: {0}")]
    UnsupportedEvent(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
