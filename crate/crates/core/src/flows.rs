//! Flows of time-varying vector fields in a chart, equilibrium checks,
//! finite-difference pushforwards and the geodesic lift of a field to the
//! tangent space at an equilibrium.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, ExprError, Params};
use crate::geodesics::{GeodesicOptions, GeodesicSolver, LogWarmStart};
use crate::linalg::{self, quadratic_norm};
use crate::manifold::{fd_step, ChartDomain, ChartPoint, ManifoldDescriptor};
use crate::ode::{hermite, Rk4};
use crate::sampling;

/// `ẋ = f(x, t)` in chart coordinates.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// True when `f` does not depend on `t`.
    fn is_autonomous(&self) -> bool {
        false
    }

    fn sources(&self) -> Option<Vec<String>> {
        None
    }
}

/// Field whose components are expressions in `x1..xn` and `t`.
#[derive(Debug, Clone)]
pub struct ExprField {
    components: Vec<CompiledExpr>,
}

impl ExprField {
    pub fn new<S: AsRef<str>>(sources: &[S], params: &Params) -> Result<Self, ExprError> {
        let dim = sources.len();
        let components = sources
            .iter()
            .map(|s| CompiledExpr::parse(s.as_ref(), dim, params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { components })
    }

    pub fn components(&self) -> &[CompiledExpr] {
        &self.components
    }
}

impl VectorField for ExprField {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x, t);
        }
        Ok(())
    }

    fn is_autonomous(&self) -> bool {
        self.components.iter().all(|c| !c.uses_time())
    }

    fn sources(&self) -> Option<Vec<String>> {
        Some(self.components.iter().map(|c| c.source().to_string()).collect())
    }
}

type FieldFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;

/// Field backed by a closure.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    autonomous: bool,
    f: Arc<FieldFn>,
}

impl FnField {
    pub fn new(dim: usize, f: impl Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            autonomous: false,
            f: Arc::new(f),
        }
    }

    pub fn autonomous(mut self) -> Self {
        self.autonomous = true;
        self
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField").field("dim", &self.dim).finish()
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (self.f)(x, t, out);
        Ok(())
    }

    fn is_autonomous(&self) -> bool {
        self.autonomous
    }
}

/// `f + h`.
#[derive(Debug, Clone)]
pub struct SumField {
    pub a: Arc<dyn VectorField>,
    pub b: Arc<dyn VectorField>,
}

impl VectorField for SumField {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.a.eval(x, t, out)?;
        let mut extra = vec![0.0; out.len()];
        self.b.eval(x, t, &mut extra)?;
        for (o, e) in out.iter_mut().zip(extra) {
            *o += e;
        }
        Ok(())
    }

    fn is_autonomous(&self) -> bool {
        self.a.is_autonomous() && self.b.is_autonomous()
    }
}

/// Evaluates `f(x, t)` into a fresh vector, flagging non-finite output.
pub fn eval_field(f: &dyn VectorField, x: &[f64], t: f64) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(f.dim());
    f.eval(x, t, out.as_mut_slice())?;
    check_finite(out.as_slice(), x, t)?;
    Ok(out)
}

fn check_finite(v: &[f64], x: &[f64], t: f64) -> Result<()> {
    if let Some(i) = v.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("field component {}", i + 1),
            point: x.to_vec(),
            time: t,
        });
    }
    Ok(())
}

/// Time-stamped RK4 solution with cubic Hermite interpolation between
/// samples (slopes are the field values at the samples).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<DVector<f64>>,
    pub slopes: Vec<DVector<f64>>,
    pub steps: usize,
    /// Endpoint error estimate `|x_N − x_{N/2}| / 15` from a half-resolution
    /// run, when requested.
    pub richardson_error: Option<f64>,
}

impl Trajectory {
    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn tf(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    pub fn endpoint(&self) -> &DVector<f64> {
        self.points.last().expect("non-empty trajectory")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Cubic Hermite interpolation; `t` must lie in `[t0, tf]`.
    pub fn interpolate(&self, t: f64) -> Result<DVector<f64>> {
        let (t0, tf) = (self.t0(), self.tf());
        let (lo, hi) = (t0.min(tf), t0.max(tf));
        if !(t >= lo - 1e-12 * hi.abs().max(1.0) && t <= hi + 1e-12 * hi.abs().max(1.0)) {
            return Err(Error::Precondition(format!(
                "time {t} outside trajectory window [{lo}, {hi}]"
            )));
        }
        let n = self.times.len();
        if n == 1 {
            return Ok(self.points[0].clone());
        }
        let h = (tf - t0) / (n - 1) as f64;
        let i = (((t - t0) / h).floor() as isize).clamp(0, n as isize - 2) as usize;
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        Ok(DVector::from_fn(self.points[0].len(), |k, _| {
            hermite(
                ta,
                tb,
                self.points[i][k],
                self.points[i + 1][k],
                self.slopes[i][k],
                self.slopes[i + 1][k],
                t,
            )
        }))
    }
}

/// RK4 from `(x0, t0)` to `tf`. Every stage point must satisfy `inside`.
pub(crate) fn rk4_flow(
    f: &dyn VectorField,
    x0: &[f64],
    t0: f64,
    tf: f64,
    steps: usize,
    inside: &dyn Fn(&[f64]) -> bool,
) -> Result<Trajectory> {
    let n = x0.len();
    if f.dim() != n {
        return Err(Error::Dimension {
            expected: f.dim(),
            got: n,
        });
    }
    if steps == 0 {
        return Err(Error::Precondition("flow integration needs at least one step".into()));
    }
    let h = (tf - t0) / steps as f64;
    let mut rk = Rk4::new(n);
    let mut rhs = |t: f64, x: &[f64], dx: &mut [f64]| -> Result<()> {
        if !inside(x) {
            return Err(Error::PathExit { exit: t });
        }
        f.eval(x, t, dx)?;
        check_finite(dx, x, t)
    };
    let mut y = x0.to_vec();
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    let mut slopes = Vec::with_capacity(steps + 1);
    rk.prime(&mut rhs, t0, &y)?;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        times.push(t);
        points.push(DVector::from_column_slice(&y));
        slopes.push(DVector::from_column_slice(rk.first_slope()));
        rk.step(&mut rhs, t, &mut y, h, true)?;
        let tn = if i + 1 == steps { tf } else { t0 + (i + 1) as f64 * h };
        rk.prime(&mut rhs, tn, &y)?;
    }
    times.push(tf);
    points.push(DVector::from_column_slice(&y));
    slopes.push(DVector::from_column_slice(rk.first_slope()));
    Ok(Trajectory {
        times,
        points,
        slopes,
        steps,
        richardson_error: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowOptions {
    pub steps: usize,
    /// Also integrate at half resolution and record the error estimate.
    pub richardson: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            steps: 512,
            richardson: true,
        }
    }
}

pub fn integrate_flow_with(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    x0: &ChartPoint,
    t0: f64,
    tf: f64,
    opts: FlowOptions,
) -> Result<Trajectory> {
    m.check_point(x0.as_slice())?;
    let domain = m.domain();
    let inside = |x: &[f64]| domain.contains(x);
    let mut traj = rk4_flow(f, x0.as_slice(), t0, tf, opts.steps, &inside)?;
    if opts.richardson && opts.steps >= 2 {
        let coarse = rk4_flow(f, x0.as_slice(), t0, tf, opts.steps / 2, &inside)?;
        traj.richardson_error = Some((traj.endpoint() - coarse.endpoint()).norm() / 15.0);
    }
    Ok(traj)
}

/// RK4 flow of `f` over `[t0, tf]` with a Richardson self-check recorded.
pub fn integrate_flow(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    x0: &ChartPoint,
    t0: f64,
    tf: f64,
    steps: usize,
) -> Result<Trajectory> {
    integrate_flow_with(
        m,
        f,
        x0,
        t0,
        tf,
        FlowOptions {
            steps,
            richardson: true,
        },
    )
}

/// Default tolerance (g-norm) for equilibrium checks.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-8;
/// Number of times at which the field is checked to vanish.
pub const EQUILIBRIUM_GRID: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub holds: bool,
    pub tolerance: f64,
    pub grid_points: usize,
    /// Largest `‖f(x̄, t)‖_g` on the time grid.
    pub max_field_norm: f64,
    /// Largest g-norm chart displacement of the flow started at `x̄`.
    pub max_drift: f64,
}

pub fn check_equilibrium(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    xbar: &ChartPoint,
    window: (f64, f64),
    tol: f64,
) -> Result<EquilibriumReport> {
    m.check_point(xbar.as_slice())?;
    let g = m.metric_at(xbar.as_slice());
    let (t0, tf) = window;
    let mut max_field = 0.0f64;
    for i in 0..EQUILIBRIUM_GRID {
        let t = t0 + (tf - t0) * i as f64 / (EQUILIBRIUM_GRID - 1) as f64;
        let v = eval_field(f, xbar.as_slice(), t)?;
        max_field = max_field.max(quadratic_norm(&g, &v));
    }
    let max_drift = match integrate_flow_with(
        m,
        f,
        xbar,
        t0,
        tf,
        FlowOptions {
            steps: 256,
            richardson: false,
        },
    ) {
        Ok(traj) => traj
            .points
            .iter()
            .map(|p| quadratic_norm(&g, &(p - &xbar.coords)))
            .fold(0.0, f64::max),
        Err(Error::PathExit { .. }) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(EquilibriumReport {
        holds: max_field <= tol && max_drift <= tol,
        tolerance: tol,
        grid_points: EQUILIBRIUM_GRID,
        max_field_norm: max_field,
        max_drift,
    })
}

/// Central-difference Jacobian of `map` at `x` (rows: outputs, columns:
/// inputs), with step `1e-5·(1 + |x_k|)`. With a domain, the stencil must fit
/// inside it.
pub fn pushforward_fd<F>(mut map: F, x: &[f64], domain: Option<&ChartDomain>) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<DVector<f64>>,
{
    if let Some(d) = domain {
        let need = x.iter().map(|v| fd_step(*v)).fold(0.0, f64::max);
        if !d.contains(x) || d.margin(x) <= need {
            return Err(Error::InsufficientMargin {
                point: x.to_vec(),
                margin: need,
            });
        }
    }
    let mut p = x.to_vec();
    let mut cols = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let h = fd_step(x[k]);
        p[k] = x[k] + h;
        let plus = map(&p)?;
        p[k] = x[k] - h;
        let minus = map(&p)?;
        p[k] = x[k];
        cols.push((plus - minus) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Sampled supremum of the operator norm of `T_x f(·, t)` over a chart ball
/// around `xbar` and a time window: the boundedness hypothesis of the
/// converse constructions, reported as a number.
pub fn field_jacobian_bound(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    xbar: &ChartPoint,
    radius: f64,
    window: (f64, f64),
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = sampling::rng(seed);
    let n = m.dim();
    let g = m.metric_at(xbar.as_slice());
    let (lo, _) = linalg::symmetric_extremes(&g);
    let mut worst = 0.0f64;
    let times = if f.is_autonomous() { 1 } else { 4 };
    for _ in 0..samples {
        let dir = sampling::unit_direction(&mut rng, n);
        let rho = sampling::ball_radius(&mut rng, radius / lo.sqrt(), n);
        let x = &xbar.coords + dir * rho;
        if !m.domain().contains(x.as_slice()) {
            continue;
        }
        for k in 0..times {
            let t = window.0 + (window.1 - window.0) * k as f64 / times.max(2) as f64;
            let j = pushforward_fd(|p| eval_field(f, p, t), x.as_slice(), Some(m.domain()))?;
            worst = worst.max(j.norm().max(spectral_norm(&j)));
        }
    }
    Ok(worst)
}

fn spectral_norm(j: &DMatrix<f64>) -> f64 {
    j.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Settings of the geodesic lift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LiftOptions {
    /// Fraction of the injectivity estimate used as the valid radius.
    pub safety: f64,
    /// RK4 steps of each geodesic shot.
    pub geodesic_steps: usize,
    /// Refuse lifts where the exponential Jacobian is worse conditioned.
    pub condition_limit: f64,
}

impl Default for LiftOptions {
    fn default() -> Self {
        Self {
            safety: 0.8,
            geodesic_steps: crate::geodesics::DEFAULT_STEPS,
            condition_limit: 1e8,
        }
    }
}

/// The geodesic lift `ż = f̂(z, t) = (T_z exp_x̄)⁻¹ f(exp_x̄ z, t)` of a field
/// to the tangent space at the equilibrium `x̄`.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    manifold: ManifoldDescriptor,
    field: Arc<dyn VectorField>,
    equilibrium: ChartPoint,
    valid_radius: f64,
    g0: DMatrix<f64>,
    opts: LiftOptions,
}

impl LiftedSystem {
    /// Lift with an explicitly chosen valid radius (g-norm in `T_x̄M`).
    pub fn with_radius(
        m: &ManifoldDescriptor,
        f: Arc<dyn VectorField>,
        xbar: &ChartPoint,
        valid_radius: f64,
        opts: LiftOptions,
    ) -> Result<Self> {
        m.check_point(xbar.as_slice())?;
        if f.dim() != m.dim() {
            return Err(Error::Dimension {
                expected: m.dim(),
                got: f.dim(),
            });
        }
        if !(valid_radius > 0.0) {
            return Err(Error::Precondition(format!(
                "lift radius must be positive, got {valid_radius}"
            )));
        }
        Ok(Self {
            manifold: m.clone(),
            field: f,
            equilibrium: xbar.clone(),
            valid_radius,
            g0: m.metric_at(xbar.as_slice()),
            opts,
        })
    }

    pub fn manifold(&self) -> &ManifoldDescriptor {
        &self.manifold
    }

    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.field
    }

    pub fn equilibrium(&self) -> &ChartPoint {
        &self.equilibrium
    }

    pub fn valid_radius(&self) -> f64 {
        self.valid_radius
    }

    /// Metric at the equilibrium, the inner product on `T_x̄M`.
    pub fn base_metric(&self) -> &DMatrix<f64> {
        &self.g0
    }

    pub fn norm(&self, z: &[f64]) -> f64 {
        quadratic_norm(&self.g0, &DVector::from_column_slice(z))
    }

    pub fn solver(&self) -> GeodesicSolver<'_> {
        GeodesicSolver::with_options(
            &self.manifold,
            GeodesicOptions {
                steps: self.opts.geodesic_steps,
                ..Default::default()
            },
        )
    }

    /// `exp_x̄ z`.
    pub fn to_manifold(&self, z: &[f64]) -> Result<ChartPoint> {
        self.solver().exp(&self.equilibrium, z)
    }

    /// `exp⁻¹_x̄ x` with the given shooting tolerance.
    pub fn to_tangent(
        &self,
        x: &ChartPoint,
        tol: f64,
        warm: Option<&LogWarmStart>,
    ) -> Result<(DVector<f64>, LogWarmStart)> {
        let solver = GeodesicSolver::with_options(
            &self.manifold,
            GeodesicOptions {
                steps: self.opts.geodesic_steps,
                log_tolerance: tol,
                ..Default::default()
            },
        );
        let (l, w) = solver.log_warm(&self.equilibrium, x, warm)?;
        Ok((l.vector.components, w))
    }

    pub fn eval_lifted(&self, z: &[f64], t: f64) -> Result<DVector<f64>> {
        let norm = self.norm(z);
        if norm > self.valid_radius {
            return Err(Error::BeyondInjectivity {
                norm,
                limit: self.valid_radius,
            });
        }
        let solver = self.solver();
        let x = solver.exp(&self.equilibrium, z)?;
        let fx = eval_field(self.field.as_ref(), x.as_slice(), t)?;
        if z.iter().all(|c| *c == 0.0) && fx.iter().all(|c| *c == 0.0) {
            return Ok(fx);
        }
        let jac = solver.exp_jacobian(&self.equilibrium, z)?;
        let condition = linalg::condition_number(&jac);
        if !(condition <= self.opts.condition_limit) {
            return Err(Error::NearSingularLift {
                condition,
                radius: norm,
            });
        }
        jac.lu().solve(&fx).ok_or(Error::NearSingularLift {
            condition,
            radius: norm,
        })
    }
}

impl VectorField for LiftedSystem {
    fn dim(&self) -> usize {
        self.manifold.dim()
    }

    fn eval(&self, z: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(self.eval_lifted(z, t)?.as_slice());
        Ok(())
    }

    fn is_autonomous(&self) -> bool {
        self.field.is_autonomous()
    }
}

/// Lifts `f` to `T_x̄M` on the radius `0.8 ·` (injectivity estimate at `x̄`).
/// `x̄` must be a verified equilibrium.
pub fn lift_dynamics(m: &ManifoldDescriptor, f: Arc<dyn VectorField>, xbar: &ChartPoint) -> Result<LiftedSystem> {
    let report = check_equilibrium(m, f.as_ref(), xbar, (0.0, 1.0), EQUILIBRIUM_TOLERANCE)?;
    if !report.holds {
        return Err(Error::Precondition(format!(
            "lift requires an equilibrium: ‖f(x̄)‖_g = {:e}, drift {:e}",
            report.max_field_norm, report.max_drift
        )));
    }
    let opts = LiftOptions::default();
    let est = GeodesicSolver::new(m).injectivity_estimate(xbar)?;
    LiftedSystem::with_radius(m, f, xbar, opts.safety * est.radius, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftRoundtripReport {
    pub max_deviation: f64,
    pub steps: usize,
    pub grid_points: usize,
}

/// Integrates the lifted system from `z0` and the original field from
/// `exp_x̄ z0`, and returns the largest Riemannian distance between
/// `exp_x̄ z(t)` and `x(t)` over the step grid (at most 33 comparison times).
pub fn lift_roundtrip_check(
    lifted: &LiftedSystem,
    z0: &[f64],
    window: (f64, f64),
    steps: usize,
) -> Result<LiftRoundtripReport> {
    let m = lifted.manifold();
    if z0.iter().all(|c| *c == 0.0) {
        return Ok(LiftRoundtripReport {
            max_deviation: 0.0,
            steps,
            grid_points: 0,
        });
    }
    let r = lifted.valid_radius();
    let inside = |z: &[f64]| lifted.norm(z) <= r;
    let zt = rk4_flow(lifted, z0, window.0, window.1, steps, &inside)?;
    let x0 = lifted.to_manifold(z0)?;
    let xt = integrate_flow_with(
        m,
        lifted.field().as_ref(),
        &x0,
        window.0,
        window.1,
        FlowOptions {
            steps,
            richardson: false,
        },
    )?;
    let solver = lifted.solver();
    let stride = (steps / 32).max(1);
    let mut worst = 0.0f64;
    let mut count = 0;
    for i in (0..=steps).step_by(stride) {
        let a = solver.exp(lifted.equilibrium(), zt.points[i].as_slice())?;
        let b = ChartPoint::new(xt.points[i].clone());
        worst = worst.max(solver.distance(&a, &b)?);
        count += 1;
    }
    Ok(LiftRoundtripReport {
        max_deviation: worst,
        steps,
        grid_points: count,
    })
}
