//! Stability analysis of dynamical systems on Riemannian manifolds.
//!
//! The crate works in a single coordinate chart per manifold. Geodesics,
//! exponential and logarithm maps, and Riemannian distance are computed
//! numerically from the metric; flows are integrated with fixed-step RK4;
//! stability is judged from sampled trajectories; Lyapunov candidates are
//! built from flows and checked on sample grids; perturbation bounds follow
//! from the checked comparison functions.

// `!(x > 0.0)` is used on purpose so that NaN fails every check, and the
// numerical kernels index several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod expr;
pub mod flows;
pub mod geodesics;
pub mod linalg;
pub mod lyapunov;
pub mod manifold;
pub mod ode;
pub mod perturbation;
pub mod sampling;
pub mod stability;
pub mod zoo;

pub use error::{Error, Result};
pub use expr::{CompiledExpr, Expr, ExprError, Params};
pub use flows::{
    check_equilibrium, integrate_flow, lift_dynamics, lift_roundtrip_check, ExprField, FnField, LiftedSystem, SumField,
    Trajectory, VectorField,
};
pub use geodesics::{distance, exp_map, injectivity_estimate, log_map, GeodesicSolver};
pub use lyapunov::{
    apply_bump, chart_scaling_constants, construct_converse_exp, lie_derivative, verify_triple_asymptotic,
    verify_triple_exponential, BoundEstimates, BumpFunction, LyapunovCandidate, ScalarField,
};
pub use manifold::{
    christoffel, eval_metric, metric_derivative_check, riemannian_norm, ChartDomain, ChartId, ChartPoint, Christoffel,
    ClosedForm, DerivativeMode, ExprMetric, FnMetric, ManifoldDescriptor, MetricTensor, TangentVec,
};
pub use perturbation::{
    check_h_bound, exp_bound_constants, ultimate_bound, verify_exp_bound, verify_ultimate_bound, ExpBoundConstants,
    PerturbedSystem, UltimateBound,
};
pub use stability::{
    classify, fit_class_k, fit_class_kl, fit_exponential, ComparisonK, ComparisonKL, ExpFit, StabilityVerdict,
};
