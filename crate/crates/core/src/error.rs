use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("point {point:?} lies outside the chart domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("point {point:?} is closer than {margin:e} to the chart boundary")]
    InsufficientMargin { point: Vec<f64>, margin: f64 },

    #[error("invalid metric at {point:?}: {reason}")]
    InvalidMetric { point: Vec<f64>, reason: String },

    #[error("matrix is singular or ill-conditioned (condition {condition:e})")]
    Singular { condition: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),

    #[error("path left the chart domain at parameter {exit:.6}")]
    PathExit { exit: f64 },

    #[error("non-finite value {what} at {point:?}, t = {time}")]
    NonFinite { what: String, point: Vec<f64>, time: f64 },

    #[error("shooting did not converge after {iterations} iterations (best residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("target lies beyond the injectivity limit: |v| = {norm:.6} > {limit:.6}")]
    BeyondInjectivity { norm: f64, limit: f64 },

    #[error("lift Jacobian near singular (condition {condition:e}) at |z| = {radius:.6}")]
    NearSingularLift { condition: f64, radius: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("perturbation bound {delta} exceeds the admissible maximum {admissible}")]
    DeltaTooLarge { delta: f64, admissible: f64 },

    #[error("value {value} outside the verified range [0, {max}] of the comparison function")]
    OutOfRange { value: f64, max: f64 },
}
