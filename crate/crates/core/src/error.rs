use thiserror::Error;

/// Failures raised by the integrators, the ensemble runner and the estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("nonlinear solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian in the nonlinear solve (determinant {determinant:e})")]
    SingularJacobian { determinant: f64 },

    #[error("step size {tau} outside the admissible range [0, {limit})")]
    InvalidStepSize { tau: f64, limit: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fine spacing {fine_dt} does not tile the step {tau}")]
    GridMismatch { tau: f64, fine_dt: f64 },

    #[error("horizon {horizon} is not an integer multiple of the spacing {dt}")]
    NonIntegralGrid { horizon: f64, dt: f64 },

    #[error("step {tau} is not an integer multiple of the fine spacing {fine_dt}")]
    NonIntegralRatio { tau: f64, fine_dt: f64 },

    #[error("step {step} failed: {source}")]
    StepFailed { step: usize, source: Box<Error> },

    #[error("path {path} failed: {source}")]
    PathFailed { path: usize, source: Box<Error> },

    #[error("averaging window is empty")]
    EmptyWindow,

    #[error("degenerate histogram range or bin count")]
    DegenerateRange,

    #[error("non-positive error {error:e} at step size {tau}; more paths are needed")]
    NonPositiveError { tau: f64, error: f64 },

    #[error("an order fit needs at least 3 levels, got {0}")]
    TooFewLevels(usize),

    #[error("at least 2 paths are required, got {0}")]
    TooFewPaths(usize),

    #[error("quadrature did not reach tolerance (estimate {estimate:e}, error {error_estimate:e})")]
    QuadratureNonConvergence { estimate: f64, error_estimate: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Index of the failing time step, when one is attached.
    pub fn step_index(&self) -> Option<usize> {
        match self {
            Error::StepFailed { step, .. } => Some(*step),
            Error::PathFailed { source, .. } => source.step_index(),
            _ => None,
        }
    }

    /// Index of the failing ensemble path, when one is attached.
    pub fn path_index(&self) -> Option<usize> {
        match self {
            Error::PathFailed { path, .. } => Some(*path),
            _ => None,
        }
    }
}

/// Returns `round(a / b)` when `a` is an integer multiple of `b` (relative slack 1e-9).
pub(crate) fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    if !(a.is_finite() && b.is_finite()) || b <= 0.0 || a < 0.0 {
        return None;
    }
    let ratio = a / b;
    let n = ratio.round();
    if (ratio - n).abs() <= 1e-9 * n.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}
