//! Lyapunov candidates: evaluation, Lie derivatives, the converse integral
//! construction on the geodesic lift, bump localization, and sampled
//! verification of the bound triples.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Params};
use crate::flows::{eval_field, rk4_flow, LiftedSystem, VectorField};
use crate::geodesics::{GeodesicOptions, GeodesicSolver};
use crate::linalg::{quadratic_norm, symmetric_extremes};
use crate::manifold::{fd_step, ChartDomain, ChartPoint, DerivativeMode, ManifoldDescriptor};
use crate::ode::gauss_legendre;
use crate::sampling;
use crate::stability::{ComparisonK, ExpFit};

/// A scalar function `w(x, t)` on a chart.
pub trait ScalarField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64], t: f64) -> Result<f64>;

    /// Spatial differential `∂w/∂x`. Defaults to central differences.
    fn spatial_gradient(&self, x: &[f64], t: f64) -> Result<DVector<f64>> {
        fd_gradient(&|p: &[f64], s: f64| self.value(p, s), x, t)
    }

    /// `∂w/∂x · v + ∂w/∂t · vt`. Defaults to a central difference along
    /// `(v, vt)`.
    fn directional(&self, x: &[f64], t: f64, v: &[f64], vt: f64) -> Result<f64> {
        fd_directional(&|p: &[f64], s: f64| self.value(p, s), x, t, v, vt)
    }

    fn derivative_mode(&self) -> DerivativeMode {
        DerivativeMode::FiniteDifference
    }

    fn is_autonomous(&self) -> bool {
        false
    }

    fn source(&self) -> Option<String> {
        None
    }
}

fn finite(what: &str, x: &[f64], t: f64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.into(),
            point: x.to_vec(),
            time: t,
        })
    }
}

/// Candidate given by an expression in `x1..xn` and `t`; derivatives are
/// exact (forward-mode duals).
#[derive(Debug, Clone)]
pub struct ExprScalar {
    expr: CompiledExpr,
}

impl ExprScalar {
    pub fn new(src: &str, dim: usize, params: &Params) -> Result<Self> {
        Ok(Self {
            expr: CompiledExpr::parse(src, dim, params)?,
        })
    }
}

impl ScalarField for ExprScalar {
    fn dim(&self) -> usize {
        self.expr.dim()
    }

    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        finite("candidate value", x, t, self.expr.eval(x, t))
    }

    fn spatial_gradient(&self, x: &[f64], t: f64) -> Result<DVector<f64>> {
        let mut g = DVector::zeros(x.len());
        for k in 0..x.len() {
            g[k] = finite("candidate gradient", x, t, self.expr.eval_partial(x, k, t).1)?;
        }
        Ok(g)
    }

    fn directional(&self, x: &[f64], t: f64, v: &[f64], vt: f64) -> Result<f64> {
        finite("candidate derivative", x, t, self.expr.eval_dual(x, v, t, vt).1)
    }

    fn derivative_mode(&self) -> DerivativeMode {
        DerivativeMode::Dual
    }

    fn is_autonomous(&self) -> bool {
        !self.expr.uses_time()
    }

    fn source(&self) -> Option<String> {
        Some(self.expr.source().to_string())
    }
}

/// Smooth cutoff in the `g`-norm radius of the tangent space: 1 up to
/// `inner`, 0 from `outer` on, `exp(1 − 1/(1 − u²))` in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BumpFunction {
    pub inner: f64,
    pub outer: f64,
}

impl BumpFunction {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner && outer.is_finite()) {
            return Err(Error::Precondition(format!(
                "bump radii must satisfy 0 < inner < outer, got {inner} and {outer}"
            )));
        }
        Ok(Self { inner, outer })
    }

    pub fn psi(&self, r: f64) -> f64 {
        if r <= self.inner {
            return 1.0;
        }
        if r >= self.outer {
            return 0.0;
        }
        let u = (r - self.inner) / (self.outer - self.inner);
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }

    /// `dψ/dr`.
    pub fn dpsi(&self, r: f64) -> f64 {
        if r <= self.inner || r >= self.outer {
            return 0.0;
        }
        let w = self.outer - self.inner;
        let u = (r - self.inner) / w;
        let q = 1.0 - u * u;
        self.psi(r) * (-2.0 * u / (q * q)) / w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateKind {
    Expression,
    Converse,
    Custom,
}

/// Provenance of a candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateMeta {
    pub kind: CandidateKind,
    pub source: Option<String>,
    pub horizon: Option<f64>,
    pub lift_radius: Option<f64>,
    pub quadrature_nodes: Option<usize>,
    pub flow_steps: Option<usize>,
    pub bump: Option<BumpFunction>,
}

/// A scalar candidate together with its construction metadata.
#[derive(Debug, Clone)]
pub struct LyapunovCandidate {
    field: Arc<dyn ScalarField>,
    meta: CandidateMeta,
}

impl LyapunovCandidate {
    pub fn new(field: Arc<dyn ScalarField>, kind: CandidateKind) -> Self {
        let source = field.source();
        Self {
            field,
            meta: CandidateMeta {
                kind,
                source,
                horizon: None,
                lift_radius: None,
                quadrature_nodes: None,
                flow_steps: None,
                bump: None,
            },
        }
    }

    /// A user-supplied candidate `w(x, t)` written as an expression.
    pub fn from_expression(src: &str, dim: usize, params: &Params) -> Result<Self> {
        Ok(Self::new(
            Arc::new(ExprScalar::new(src, dim, params)?),
            CandidateKind::Expression,
        ))
    }

    pub fn meta(&self) -> &CandidateMeta {
        &self.meta
    }

    pub fn field(&self) -> &Arc<dyn ScalarField> {
        &self.field
    }
}

impl ScalarField for LyapunovCandidate {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        self.field.value(x, t)
    }

    fn spatial_gradient(&self, x: &[f64], t: f64) -> Result<DVector<f64>> {
        self.field.spatial_gradient(x, t)
    }

    fn directional(&self, x: &[f64], t: f64, v: &[f64], vt: f64) -> Result<f64> {
        self.field.directional(x, t, v, vt)
    }

    fn derivative_mode(&self) -> DerivativeMode {
        self.field.derivative_mode()
    }

    fn is_autonomous(&self) -> bool {
        self.field.is_autonomous()
    }

    fn source(&self) -> Option<String> {
        self.field.source()
    }
}

/// `𝔏_f w (x, t) = ∂w/∂t + ∂w/∂x · f(x, t)`.
pub fn lie_derivative(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    w: &dyn ScalarField,
    x: &ChartPoint,
    t: f64,
) -> Result<f64> {
    let xs = x.as_slice();
    m.check_point(xs)?;
    if w.dim() != m.dim() || f.dim() != m.dim() {
        return Err(Error::Dimension {
            expected: m.dim(),
            got: if w.dim() != m.dim() { w.dim() } else { f.dim() },
        });
    }
    if w.derivative_mode() == DerivativeMode::FiniteDifference {
        let need = fd_step(xs.iter().fold(0.0f64, |a, c| a.max(c.abs())));
        if m.domain().margin(xs) <= need {
            return Err(Error::InsufficientMargin {
                point: xs.to_vec(),
                margin: need,
            });
        }
    }
    let fx = eval_field(f, xs, t)?;
    let lie = w.directional(xs, t, fx.as_slice(), 1.0)?;
    finite("Lie derivative", xs, t, lie)
}

/// Settings of the converse integral construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConverseOptions {
    /// RK4 steps over the horizon.
    pub steps: usize,
    /// Gauss–Legendre nodes on `[t, t + T]`.
    pub nodes: usize,
    /// Shooting tolerance of `exp⁻¹_x̄` inside the candidate; tight because
    /// derivatives of the candidate are taken by differencing through it.
    pub log_tolerance: f64,
}

impl Default for ConverseOptions {
    fn default() -> Self {
        Self {
            steps: 256,
            nodes: 32,
            log_tolerance: 1e-12,
        }
    }
}

/// `v̂(x, t) = ∫_t^{t+T} ‖φ_f̂(τ; t, exp⁻¹_x̄ x)‖²_g dτ` for the lifted field f̂.
#[derive(Debug, Clone)]
pub struct ConverseField {
    lifted: Arc<LiftedSystem>,
    horizon: f64,
    opts: ConverseOptions,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ConverseField {
    pub fn lifted(&self) -> &LiftedSystem {
        &self.lifted
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Tangent coordinates `exp⁻¹_x̄ x`.
    pub fn tangent(&self, x: &[f64]) -> Result<DVector<f64>> {
        let p = ChartPoint::from_slice(x);
        if p.coords == self.lifted.equilibrium().coords {
            return Ok(DVector::zeros(x.len()));
        }
        let (z, _) = self.lifted.to_tangent(&p, self.opts.log_tolerance, None)?;
        Ok(z)
    }

    /// The integral in tangent coordinates, plus `‖φ(t + T)‖²_g`.
    pub fn integral(&self, z: &[f64], t: f64) -> Result<(f64, f64)> {
        if z.iter().all(|c| *c == 0.0) {
            return Ok((0.0, 0.0));
        }
        let r = self.lifted.valid_radius();
        let lifted = self.lifted.as_ref();
        let inside = |y: &[f64]| lifted.norm(y) <= r;
        let traj = rk4_flow(lifted, z, t, t + self.horizon, self.opts.steps, &inside)?;
        let g = self.lifted.base_metric();
        let half = 0.5 * self.horizon;
        let mut sum = 0.0;
        for (node, weight) in self.nodes.iter().zip(&self.weights) {
            let p = traj.interpolate(t + half * (1.0 + node))?;
            sum += weight * quadratic_norm(g, &p).powi(2);
        }
        Ok((half * sum, quadratic_norm(g, traj.endpoint()).powi(2)))
    }

    /// Lie derivative along the field the candidate was built from, by
    /// differentiating under the integral: `‖φ(t + T)‖² − ‖z‖²`.
    pub fn lie_identity(&self, x: &[f64], t: f64) -> Result<f64> {
        let z = self.tangent(x)?;
        let (_, end) = self.integral(z.as_slice(), t)?;
        Ok(end - quadratic_norm(self.lifted.base_metric(), &z).powi(2))
    }
}

impl ScalarField for ConverseField {
    fn dim(&self) -> usize {
        self.lifted.manifold().dim()
    }

    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        let z = self.tangent(x)?;
        Ok(self.integral(z.as_slice(), t)?.0)
    }

    fn is_autonomous(&self) -> bool {
        self.lifted.field().is_autonomous()
    }
}

/// Horizon `T` with `K²·e^(−2λT) = 0.1` for a fitted exponential envelope.
pub fn default_horizon(fit: &ExpFit) -> f64 {
    (10.0 * fit.k * fit.k).ln() / (2.0 * fit.lambda)
}

/// Builds the converse candidate `v̂` of an exponentially stable equilibrium
/// on the lift of radius `lift_radius` with horizon `T`.
pub fn construct_converse_exp(
    m: &ManifoldDescriptor,
    f: Arc<dyn VectorField>,
    xbar: &ChartPoint,
    lift_radius: f64,
    horizon: f64,
) -> Result<LyapunovCandidate> {
    let lifted = LiftedSystem::with_radius(m, f, xbar, lift_radius, Default::default())?;
    construct_converse_on(Arc::new(lifted), horizon, ConverseOptions::default())
}

/// The bare converse field, without candidate metadata.
pub fn converse_field(lifted: Arc<LiftedSystem>, horizon: f64, opts: ConverseOptions) -> Result<ConverseField> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    if opts.steps == 0 || opts.nodes == 0 {
        return Err(Error::Precondition(
            "converse construction needs steps and nodes".into(),
        ));
    }
    let (nodes, weights) = gauss_legendre(opts.nodes);
    Ok(ConverseField {
        lifted,
        horizon,
        opts,
        nodes,
        weights,
    })
}

/// As [`construct_converse_exp`] on an existing lift.
pub fn construct_converse_on(
    lifted: Arc<LiftedSystem>,
    horizon: f64,
    opts: ConverseOptions,
) -> Result<LyapunovCandidate> {
    let radius = lifted.valid_radius();
    let field = converse_field(lifted, horizon, opts)?;
    let mut c = LyapunovCandidate::new(Arc::new(field), CandidateKind::Converse);
    c.meta.horizon = Some(horizon);
    c.meta.lift_radius = Some(radius);
    c.meta.quadrature_nodes = Some(opts.nodes);
    c.meta.flow_steps = Some(opts.steps);
    Ok(c)
}

/// `w(x, t) = ψ(‖exp⁻¹_x̄ x‖_g) · v̂(x, t)`.
#[derive(Debug, Clone)]
struct BumpedField {
    inner: Arc<dyn ScalarField>,
    bump: BumpFunction,
    manifold: ManifoldDescriptor,
    xbar: ChartPoint,
    g0: DMatrix<f64>,
}

impl BumpedField {
    /// Tangent radius of `x`, or `None` when `x` is not reached by a
    /// geodesic of length below the outer radius.
    fn radius(&self, x: &[f64]) -> Result<Option<f64>> {
        let p = ChartPoint::from_slice(x);
        if p.coords == self.xbar.coords {
            return Ok(Some(0.0));
        }
        let solver = GeodesicSolver::with_options(
            &self.manifold,
            GeodesicOptions {
                log_tolerance: 1e-12,
                ..Default::default()
            },
        );
        match solver.log(&self.xbar, &p) {
            Ok(l) => Ok(Some(quadratic_norm(&self.g0, &l.vector.components))),
            Err(Error::NoConvergence { .. } | Error::BeyondInjectivity { .. } | Error::PathExit { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

impl ScalarField for BumpedField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        match self.radius(x)? {
            Some(r) if r < self.bump.outer => {
                let psi = self.bump.psi(r);
                Ok(psi * self.inner.value(x, t)?)
            }
            _ => Ok(0.0),
        }
    }

    // inside the inner ball ψ ≡ 1, so the raw candidate's derivatives are exact

    fn spatial_gradient(&self, x: &[f64], t: f64) -> Result<DVector<f64>> {
        match self.radius(x)? {
            Some(r) if r <= self.bump.inner => self.inner.spatial_gradient(x, t),
            Some(r) if r >= self.bump.outer => Ok(DVector::zeros(x.len())),
            None => Ok(DVector::zeros(x.len())),
            Some(_) => fd_gradient(&|p: &[f64], s: f64| self.value(p, s), x, t),
        }
    }

    fn directional(&self, x: &[f64], t: f64, v: &[f64], vt: f64) -> Result<f64> {
        match self.radius(x)? {
            Some(r) if r <= self.bump.inner => self.inner.directional(x, t, v, vt),
            Some(r) if r >= self.bump.outer => Ok(0.0),
            None => Ok(0.0),
            Some(_) => fd_directional(&|p: &[f64], s: f64| self.value(p, s), x, t, v, vt),
        }
    }

    fn derivative_mode(&self) -> DerivativeMode {
        self.inner.derivative_mode()
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }

    fn source(&self) -> Option<String> {
        self.inner.source()
    }
}

type ValueFn<'a> = dyn Fn(&[f64], f64) -> Result<f64> + 'a;

fn fd_gradient(w: &ValueFn<'_>, x: &[f64], t: f64) -> Result<DVector<f64>> {
    let mut p = x.to_vec();
    let mut grad = DVector::zeros(x.len());
    for k in 0..x.len() {
        let h = fd_step(x[k]);
        p[k] = x[k] + h;
        let plus = w(&p, t)?;
        p[k] = x[k] - h;
        let minus = w(&p, t)?;
        p[k] = x[k];
        grad[k] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

fn fd_directional(w: &ValueFn<'_>, x: &[f64], t: f64, v: &[f64], vt: f64) -> Result<f64> {
    let scale = v.iter().fold(vt.abs(), |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Ok(0.0);
    }
    let xmax = x.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let h = fd_step(xmax) / scale.max(1.0);
    let shift = |s: f64| -> Vec<f64> { x.iter().zip(v).map(|(a, b)| a + s * b).collect() };
    let plus = w(&shift(h), t + h * vt)?;
    let minus = w(&shift(-h), t - h * vt)?;
    Ok((plus - minus) / (2.0 * h))
}

/// Localizes a candidate around `x̄` with a bump in the tangent radius.
pub fn apply_bump(
    m: &ManifoldDescriptor,
    xbar: &ChartPoint,
    candidate: &LyapunovCandidate,
    bump: BumpFunction,
) -> Result<LyapunovCandidate> {
    BumpFunction::new(bump.inner, bump.outer)?;
    if let Some(lift) = candidate.meta.lift_radius {
        if bump.outer > lift * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!(
                "bump outer radius {} exceeds the lift radius {lift}",
                bump.outer
            )));
        }
    }
    m.check_point(xbar.as_slice())?;
    let field = BumpedField {
        inner: candidate.field.clone(),
        bump,
        manifold: m.clone(),
        xbar: xbar.clone(),
        g0: m.metric_at(xbar.as_slice()),
    };
    let mut meta = candidate.meta.clone();
    meta.bump = Some(bump);
    Ok(LyapunovCandidate {
        field: Arc::new(field),
        meta,
    })
}

/// Default bump radii: outer `0.8 ·` injectivity estimate, inner half of it.
pub fn default_bump(injectivity_radius: f64) -> Result<BumpFunction> {
    let outer = 0.8 * injectivity_radius;
    BumpFunction::new(0.5 * outer, outer)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOptions {
    /// Riemannian radius of the verification ball around `x̄`.
    pub region: f64,
    pub samples: usize,
    /// Sample times; collapsed to the first entry when both the field and
    /// the candidate are autonomous.
    pub t_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            region: 0.5,
            samples: 64,
            t_grid: vec![0.0, 1.0, 10.0],
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMode {
    Asymptotic,
    Exponential,
}

/// One evaluated verification sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSample {
    pub x: Vec<f64>,
    pub t: f64,
    /// `d(x, x̄)`.
    pub distance: f64,
    pub value: f64,
    pub lie: f64,
    /// `√(∇wᵀ g⁻¹ ∇w)`.
    pub dual_norm: f64,
    /// Euclidean norm of the coordinate gradient.
    pub coordinate_norm: f64,
}

/// A sample where one of the triple's inequalities cannot hold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    /// `"positivity"` or `"decrease"`.
    pub condition: String,
    pub sample: BoundSample,
}

/// Comparison functions or constants of a verified triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEstimates {
    pub mode: BoundMode,
    pub passed: bool,
    pub region_radius: f64,
    pub samples: usize,
    pub t_grid: Vec<f64>,
    pub seed: u64,
    pub alpha1: Option<ComparisonK>,
    pub alpha2: Option<ComparisonK>,
    pub alpha3: Option<ComparisonK>,
    pub alpha4: Option<ComparisonK>,
    /// Same as `alpha4` for the coordinate norm of the gradient.
    pub alpha4_coordinate: Option<ComparisonK>,
    pub lambdas: Option<[f64; 4]>,
    /// `λ₄` for the coordinate norm of the gradient.
    pub lambda4_coordinate: Option<f64>,
    pub violations: usize,
    /// Smallest of `w/d^p` and `−𝔏w/d^p` over the samples (`p = 2` in
    /// exponential mode, `p = 0` otherwise); negative on violation.
    pub worst_margin: f64,
    pub worst: Option<BoundViolation>,
    pub reason: Option<String>,
}

fn evaluate_samples(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    xbar: &ChartPoint,
    w: &dyn ScalarField,
    opts: &VerifyOptions,
) -> Result<(Vec<BoundSample>, Vec<f64>)> {
    m.check_point(xbar.as_slice())?;
    if !(opts.region > 0.0 && opts.region.is_finite()) {
        return Err(Error::Precondition(format!(
            "verification region must have positive radius, got {}",
            opts.region
        )));
    }
    if opts.samples == 0 || opts.t_grid.is_empty() {
        return Err(Error::Precondition("verification needs samples and a time grid".into()));
    }
    let t_grid = if f.is_autonomous() && w.is_autonomous() {
        vec![opts.t_grid[0]]
    } else {
        opts.t_grid.clone()
    };
    let g0 = m.metric_at(xbar.as_slice());
    let solver = GeodesicSolver::new(m);
    let mut rng = sampling::rng(opts.seed);
    let mut out = Vec::with_capacity(opts.samples * t_grid.len());
    for i in 0..opts.samples {
        // radii stratified over (0, r]; along a geodesic within the
        // injectivity ball the distance equals the initial speed
        let d = opts.region * (i + 1) as f64 / opts.samples as f64;
        let u = sampling::g_unit_direction(&mut rng, &g0);
        let x = solver.exp(xbar, (u * d).as_slice())?;
        let xs = x.as_slice();
        let g = m.metric_at(xs);
        let ginv = g.clone().try_inverse().ok_or(Error::Singular {
            condition: f64::INFINITY,
        })?;
        for t in &t_grid {
            let value = w.value(xs, *t)?;
            let grad = w.spatial_gradient(xs, *t)?;
            // a differenced autonomous candidate reuses its gradient instead
            // of differencing again along f
            let lie = if w.derivative_mode() == DerivativeMode::FiniteDifference && w.is_autonomous() {
                grad.dot(&eval_field(f, xs, *t)?)
            } else {
                lie_derivative(m, f, w, &x, *t)?
            };
            let dual_norm = quadratic_norm(&ginv, &grad);
            out.push(BoundSample {
                x: xs.to_vec(),
                t: *t,
                distance: d,
                value,
                lie,
                dual_norm,
                coordinate_norm: grad.norm(),
            });
        }
    }
    Ok((out, t_grid))
}

fn check_bump_region(w: &LyapunovCandidate, region: f64) -> Result<()> {
    if let Some(b) = w.meta.bump {
        if region > b.inner * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!(
                "verification region {region} exceeds the bump inner radius {}",
                b.inner
            )));
        }
    }
    Ok(())
}

fn empty_estimates(mode: BoundMode, opts: &VerifyOptions, samples: usize, t_grid: Vec<f64>) -> BoundEstimates {
    BoundEstimates {
        mode,
        passed: false,
        region_radius: opts.region,
        samples,
        t_grid,
        seed: opts.seed,
        alpha1: None,
        alpha2: None,
        alpha3: None,
        alpha4: None,
        alpha4_coordinate: None,
        lambdas: None,
        lambda4_coordinate: None,
        violations: 0,
        worst_margin: f64::INFINITY,
        worst: None,
        reason: None,
    }
}

/// Records positivity (`w > 0`) and decrease (`𝔏w < 0`) violations, with
/// margins scaled by `d^power`.
fn scan_violations(est: &mut BoundEstimates, samples: &[BoundSample], power: i32) {
    for s in samples {
        let scale = s.distance.powi(power);
        for (condition, margin) in [("positivity", s.value / scale), ("decrease", -s.lie / scale)] {
            let bad = !(margin > 0.0);
            if bad {
                est.violations += 1;
            }
            if margin < est.worst_margin || (bad && est.worst.is_none()) || margin.is_nan() {
                est.worst_margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
                if bad || est.worst.is_some() {
                    est.worst = Some(BoundViolation {
                        condition: condition.into(),
                        sample: s.clone(),
                    });
                }
            }
        }
    }
    if est.violations == 0 {
        est.worst = None;
    }
}

/// Fits `α₁ ≤ w ≤ α₂`, `𝔏w ≤ −α₃`, `‖dw‖ ≤ α₄` (all of `d(x, x̄)`) on a
/// sampled ball.
pub fn verify_triple_asymptotic(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    xbar: &ChartPoint,
    w: &LyapunovCandidate,
    opts: &VerifyOptions,
) -> Result<BoundEstimates> {
    check_bump_region(w, opts.region)?;
    let (samples, t_grid) = evaluate_samples(m, f, xbar, w, opts)?;
    let mut est = empty_estimates(BoundMode::Asymptotic, opts, samples.len(), t_grid);
    scan_violations(&mut est, &samples, 0);
    let pts = |g: fn(&BoundSample) -> f64| -> Vec<(f64, f64)> { samples.iter().map(|s| (s.distance, g(s))).collect() };
    est.alpha2 = ComparisonK::upper_envelope(&pts(|s| s.value)).ok();
    est.alpha4 = ComparisonK::upper_envelope(&pts(|s| s.dual_norm)).ok();
    est.alpha4_coordinate = ComparisonK::upper_envelope(&pts(|s| s.coordinate_norm)).ok();
    if est.violations > 0 {
        est.reason = Some(format!("{} sample inequalities violated", est.violations));
        return Ok(est);
    }
    let lower1 = ComparisonK::lower_envelope(&pts(|s| s.value));
    let lower3 = ComparisonK::lower_envelope(&pts(|s| -s.lie));
    match (lower1, lower3) {
        (Ok(a1), Ok(a3)) => {
            est.alpha1 = Some(a1);
            est.alpha3 = Some(a3);
        }
        (Err(e), _) | (_, Err(e)) => {
            est.reason = Some(e.to_string());
            return Ok(est);
        }
    }
    est.passed = est.alpha2.is_some() && est.alpha4.is_some();
    Ok(est)
}

/// Constants `λ₁ d² ≤ v ≤ λ₂ d²`, `𝔏v ≤ −λ₃ d²`, `‖dv‖ ≤ λ₄ d` on a sampled
/// ball.
pub fn verify_triple_exponential(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    xbar: &ChartPoint,
    v: &LyapunovCandidate,
    opts: &VerifyOptions,
) -> Result<BoundEstimates> {
    check_bump_region(v, opts.region)?;
    let (samples, t_grid) = evaluate_samples(m, f, xbar, v, opts)?;
    let mut est = empty_estimates(BoundMode::Exponential, opts, samples.len(), t_grid);
    scan_violations(&mut est, &samples, 2);
    let mut l = [f64::INFINITY, 0.0, f64::INFINITY, 0.0];
    let mut l4c = 0.0f64;
    for s in &samples {
        let d2 = s.distance * s.distance;
        l[0] = l[0].min(s.value / d2);
        l[1] = l[1].max(s.value / d2);
        l[2] = l[2].min(-s.lie / d2);
        l[3] = l[3].max(s.dual_norm / s.distance);
        l4c = l4c.max(s.coordinate_norm / s.distance);
    }
    est.lambdas = Some(l);
    est.lambda4_coordinate = Some(l4c);
    est.passed = est.violations == 0 && l.iter().all(|v| v.is_finite() && *v > 0.0) && l[0] <= l[1];
    if !est.passed && est.reason.is_none() {
        est.reason = Some(if est.violations > 0 {
            format!("{} sample inequalities violated", est.violations)
        } else {
            format!("constants not all positive and finite: {l:?}")
        });
    }
    Ok(est)
}

/// Singular values of `g^{1/2}` over a chart box, and the equivalence
/// constants between the metric and coordinate norms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingConstants {
    /// Smallest singular value of `g^{1/2}` over the samples.
    pub sigma_min: f64,
    /// Largest singular value of `g^{1/2}` over the samples.
    pub sigma_max: f64,
    /// `c₁ = 1/σ_max`, so that `c₁‖X‖_g ≤ ‖X‖_e`.
    pub c1: f64,
    /// `c₂ = 1/σ_min`, so that `‖X‖_e ≤ c₂‖X‖_g`.
    pub c2: f64,
    pub samples: usize,
    /// The norm inequality held on every (point, random vector) check.
    pub certified: bool,
}

/// Samples the box (corners, center and `n_samples` random points) and
/// bounds the metric's eigenvalues.
pub fn chart_scaling_constants(
    m: &ManifoldDescriptor,
    region: &ChartDomain,
    n_samples: usize,
    seed: u64,
) -> Result<ScalingConstants> {
    use rand::Rng;
    let n = m.dim();
    if region.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: region.dim(),
        });
    }
    let mut points = Vec::new();
    for mask in 0..(1usize << n.min(10)) {
        points.push(
            (0..n)
                .map(|k| {
                    if mask >> k & 1 == 1 {
                        region.upper[k]
                    } else {
                        region.lower[k]
                    }
                })
                .collect::<Vec<f64>>(),
        );
    }
    points.push(region.center());
    let mut rng = sampling::rng(seed);
    for _ in 0..n_samples {
        points.push(
            (0..n)
                .map(|k| region.lower[k] + rng.random::<f64>() * (region.upper[k] - region.lower[k]))
                .collect(),
        );
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut metrics = Vec::with_capacity(points.len());
    for p in &points {
        let g = crate::manifold::eval_metric(m, &ChartPoint::from_slice(p))?;
        let (emin, emax) = symmetric_extremes(&g);
        if !(emin > 0.0) {
            return Err(Error::InvalidMetric {
                point: p.clone(),
                reason: format!("smallest eigenvalue {emin}"),
            });
        }
        lo = lo.min(emin.sqrt());
        hi = hi.max(emax.sqrt());
        metrics.push(g);
    }
    let (c1, c2) = (1.0 / hi, 1.0 / lo);
    let mut certified = true;
    for g in &metrics {
        let v = sampling::unit_direction(&mut rng, n);
        let gn = quadratic_norm(g, &v);
        let e = v.norm();
        certified &= c1 * gn <= e * (1.0 + 1e-12) && e <= c2 * gn * (1.0 + 1e-12);
    }
    Ok(ScalingConstants {
        sigma_min: lo,
        sigma_max: hi,
        c1,
        c2,
        samples: points.len(),
        certified,
    })
}
