use thiserror::Error;

/// Errors raised by the numerical workbench.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("point outside atlas: {0}")]
    Domain(String),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("integrator failure: {0}")]
    Integrator(String),
    #[error("refinement did not converge (last residual {residual:e}): {reason}")]
    Refinement { residual: f64, reason: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("tangential intersection detected (|sin angle| = {sin_angle:e})")]
    Tangency { sin_angle: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-trapping violation: geodesic did not exit before t = {0}")]
    Trapped(f64),
    #[error("numerical blow-up at step {step}: {detail}")]
    BlowUp { step: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, GeoError>;
