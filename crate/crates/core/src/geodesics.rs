//! Geodesics in a chart: the initial value problem `γ̈ⁱ + Γⁱ_jk γ̇ʲ γ̇ᵏ = 0`,
//! the exponential map, its inverse by shooting, Riemannian distance and
//! probes of the injectivity radius.
//!
//! The geodesic acceleration is evaluated without materializing Γ: with
//! `A_l = (∂_k g_jl) vʲvᵏ − ½ (∂_l g_jk) vʲvᵏ` the acceleration solves
//! `g a = −A`, which a Cholesky factorization of `g` handles cheaply.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_in_place, cholesky_solve, quadratic_norm, METRIC_CONDITION_LIMIT};
use crate::manifold::{ChartDomain, ChartPoint, ManifoldDescriptor, Scratch, TangentVec};
use crate::ode::Rk4;
use crate::sampling;

/// Default number of RK4 steps over `s ∈ [0, 1]`.
pub const DEFAULT_STEPS: usize = 512;
/// Condition number above which the exponential map counts as singular.
pub const JACOBIAN_CONDITION_LIMIT: f64 = 1e8;
/// Tolerance of the exp/log round trip used by the injectivity probe.
pub const ROUNDTRIP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeodesicOptions {
    pub steps: usize,
    /// Shooting stops once the chart-coordinate residual is below this.
    pub log_tolerance: f64,
    pub max_iterations: usize,
    /// Refuse log results longer than this (g-norm), if set.
    pub injectivity_limit: Option<f64>,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            log_tolerance: 1e-9,
            max_iterations: 50,
            injectivity_limit: None,
        }
    }
}

/// One sample of an integrated geodesic.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSample {
    pub s: f64,
    pub point: DVector<f64>,
    pub velocity: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicPath {
    pub samples: Vec<GeodesicSample>,
}

impl GeodesicPath {
    pub fn endpoint(&self) -> ChartPoint {
        ChartPoint::new(self.samples.last().expect("non-empty path").point.clone())
    }

    /// `√(g(γ̇, γ̇))` at every sample.
    pub fn speeds(&self, m: &ManifoldDescriptor) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| quadratic_norm(&m.metric_at(s.point.as_slice()), &s.velocity))
            .collect()
    }

    /// Largest relative deviation of the speed from its initial value.
    pub fn speed_drift(&self, m: &ManifoldDescriptor) -> f64 {
        let speeds = self.speeds(m);
        let s0 = speeds[0];
        if s0 == 0.0 {
            return speeds.iter().fold(0.0, |a, s| a.max(*s));
        }
        speeds.iter().fold(0.0, |a, s| a.max((s - s0).abs() / s0))
    }

    pub fn points(&self) -> Vec<ChartPoint> {
        self.samples.iter().map(|s| ChartPoint::new(s.point.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogResult {
    pub vector: TangentVec,
    /// Final chart-coordinate mismatch `|exp_x(v) − y|`.
    pub residual: f64,
    pub iterations: usize,
}

/// Starting data for shooting, typically the solution for a nearby target.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWarmStart {
    pub v: DVector<f64>,
    pub jacobian: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectivityMethod {
    JacobianSingularity,
    RoundtripFailure,
    DomainBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InjectivityEstimate {
    pub radius: f64,
    /// Failure mode observed just beyond `radius`.
    pub method: InjectivityMethod,
    /// Width of the final bisection bracket.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallIdentityReport {
    pub radius: f64,
    pub injectivity_radius: f64,
    pub tangent_samples: usize,
    /// Largest `|d(x, exp v) − ‖v‖| / ‖v‖`.
    pub max_relative_discrepancy: f64,
    pub chart_samples: usize,
    /// Chart samples whose log exceeded the length of the straight chart path.
    pub log_norm_violations: usize,
    pub max_roundtrip_error: f64,
}

impl BallIdentityReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_relative_discrepancy <= tol && self.log_norm_violations == 0 && self.max_roundtrip_error <= 1e-8
    }
}

struct Work {
    n: usize,
    g: Vec<f64>,
    dg: Vec<f64>,
    scratch: Scratch,
}

impl Work {
    fn new(n: usize) -> Self {
        Self {
            n,
            g: vec![0.0; n * n],
            dg: vec![0.0; n * n * n],
            scratch: Scratch::default(),
        }
    }

    /// Geodesic acceleration `−Γ(v, v)` at `x`.
    fn accel(&mut self, m: &ManifoldDescriptor, x: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        m.fill_with_partials(x, &mut self.g, &mut self.dg, &mut self.scratch);
        let dg = &self.dg;
        for l in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                let mut inner = 0.0;
                for k in 0..n {
                    inner += (dg[(k * n + j) * n + l] - 0.5 * dg[(l * n + j) * n + k]) * v[k];
                }
                s += inner * v[j];
            }
            out[l] = -s;
        }
        match cholesky_in_place(&mut self.g, n) {
            Some(cond) if cond <= METRIC_CONDITION_LIMIT => {}
            _ => {
                return Err(Error::InvalidMetric {
                    point: x.to_vec(),
                    reason: "metric not positive definite or too ill-conditioned".into(),
                })
            }
        }
        cholesky_solve(&self.g, n, out);
        Ok(())
    }
}

/// Geodesic computations on one manifold with fixed options.
#[derive(Debug, Clone, Copy)]
pub struct GeodesicSolver<'a> {
    m: &'a ManifoldDescriptor,
    opts: GeodesicOptions,
}

/// Geodesic of a constant metric: `x + s·v`. The box domain is convex, so
/// the segment stays inside iff its endpoint does.
fn straight_shot(
    domain: &ChartDomain,
    x: &[f64],
    v: &[f64],
    steps: usize,
    record: Option<&mut Vec<GeodesicSample>>,
) -> Result<Vec<f64>> {
    let end: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + b).collect();
    if !domain.contains(&end) {
        let mut exit = 1.0f64;
        for k in 0..x.len() {
            let bound = if v[k] > 0.0 {
                domain.upper[k]
            } else if v[k] < 0.0 {
                domain.lower[k]
            } else {
                continue;
            };
            exit = exit.min((bound - x[k]) / v[k]);
        }
        return Err(Error::PathExit { exit });
    }
    if let Some(rec) = record {
        for i in 1..=steps {
            let s = i as f64 / steps as f64;
            rec.push(GeodesicSample {
                s,
                point: DVector::from_fn(x.len(), |k, _| x[k] + s * v[k]),
                velocity: DVector::from_column_slice(v),
            });
        }
    }
    let mut y = end;
    y.extend_from_slice(v);
    Ok(y)
}

impl<'a> GeodesicSolver<'a> {
    pub fn new(m: &'a ManifoldDescriptor) -> Self {
        Self {
            m,
            opts: GeodesicOptions::default(),
        }
    }

    pub fn with_options(m: &'a ManifoldDescriptor, opts: GeodesicOptions) -> Self {
        Self { m, opts }
    }

    pub fn options(&self) -> &GeodesicOptions {
        &self.opts
    }

    pub fn manifold(&self) -> &'a ManifoldDescriptor {
        self.m
    }

    fn check_vector(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.m.dim() {
            return Err(Error::Dimension {
                expected: self.m.dim(),
                got: v.len(),
            });
        }
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite {
                what: "tangent vector".into(),
                point: v.to_vec(),
                time: 0.0,
            });
        }
        Ok(())
    }

    /// Integrates from `(x, v)`; returns the final state `(γ(1), γ̇(1))`
    /// flattened. When `record` is given every step is appended to it.
    fn shoot(&self, x: &[f64], v: &[f64], mut record: Option<&mut Vec<GeodesicSample>>) -> Result<Vec<f64>> {
        let n = self.m.dim();
        let steps = self.opts.steps.max(1);
        let mut y = Vec::with_capacity(2 * n);
        y.extend_from_slice(x);
        y.extend_from_slice(v);
        if let Some(rec) = record.as_deref_mut() {
            rec.push(GeodesicSample {
                s: 0.0,
                point: DVector::from_column_slice(x),
                velocity: DVector::from_column_slice(v),
            });
        }
        if v.iter().all(|c| *c == 0.0) {
            if let Some(rec) = record.as_deref_mut() {
                for i in 1..=steps {
                    rec.push(GeodesicSample {
                        s: i as f64 / steps as f64,
                        point: DVector::from_column_slice(x),
                        velocity: DVector::from_column_slice(v),
                    });
                }
            }
            return Ok(y);
        }
        let domain = self.m.domain();
        if self.m.has_constant_metric() {
            return straight_shot(domain, x, v, steps, record);
        }
        let mut work = Work::new(n);
        let mut rk = Rk4::new(2 * n);
        let mut rhs = |s: f64, state: &[f64], ds: &mut [f64]| -> Result<()> {
            let (pos, vel) = state.split_at(n);
            if !domain.contains(pos) {
                return Err(Error::PathExit { exit: s });
            }
            ds[..n].copy_from_slice(vel);
            work.accel(self.m, pos, vel, &mut ds[n..])?;
            if !ds[n..].iter().all(|a| a.is_finite()) {
                return Err(Error::NonFinite {
                    what: "geodesic acceleration".into(),
                    point: pos.to_vec(),
                    time: s,
                });
            }
            Ok(())
        };
        let h = 1.0 / steps as f64;
        for i in 0..steps {
            let s = i as f64 * h;
            rk.step(&mut rhs, s, &mut y, h, false)?;
            if !domain.contains(&y[..n]) {
                return Err(Error::PathExit { exit: s + h });
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.push(GeodesicSample {
                    s: (i + 1) as f64 * h,
                    point: DVector::from_column_slice(&y[..n]),
                    velocity: DVector::from_column_slice(&y[n..]),
                });
            }
        }
        Ok(y)
    }

    fn end(&self, x: &[f64], v: &[f64]) -> Result<DVector<f64>> {
        let y = self.shoot(x, v, None)?;
        Ok(DVector::from_column_slice(&y[..self.m.dim()]))
    }

    pub fn integrate(&self, x: &ChartPoint, v: &[f64]) -> Result<GeodesicPath> {
        self.m.check_point(x.as_slice())?;
        self.check_vector(v)?;
        let mut samples = Vec::with_capacity(self.opts.steps + 1);
        self.shoot(x.as_slice(), v, Some(&mut samples))?;
        Ok(GeodesicPath { samples })
    }

    pub fn exp(&self, x: &ChartPoint, v: &[f64]) -> Result<ChartPoint> {
        self.m.check_point(x.as_slice())?;
        self.check_vector(v)?;
        Ok(ChartPoint::new(self.end(x.as_slice(), v)?))
    }

    /// Central-difference Jacobian of `v ↦ exp_x(v)`.
    pub fn exp_jacobian(&self, x: &ChartPoint, v: &[f64]) -> Result<DMatrix<f64>> {
        self.m.check_point(x.as_slice())?;
        self.check_vector(v)?;
        self.fd_jacobian(x.as_slice(), v)
    }

    fn fd_jacobian(&self, x: &[f64], v: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.m.dim();
        let mut jac = DMatrix::zeros(n, n);
        let mut w = v.to_vec();
        for k in 0..n {
            let h = 1e-5 * (1.0 + v[k].abs());
            w[k] = v[k] + h;
            let plus = self.end(x, &w)?;
            w[k] = v[k] - h;
            let minus = self.end(x, &w)?;
            w[k] = v[k];
            jac.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        Ok(jac)
    }

    pub fn log(&self, x: &ChartPoint, y: &ChartPoint) -> Result<LogResult> {
        self.log_warm(x, y, None).map(|(r, _)| r)
    }

    /// Shooting for `exp_x(v) = y` by damped Newton with Broyden updates of
    /// a finite-difference Jacobian. Returns the solution together with a
    /// warm start suitable for a nearby target.
    pub fn log_warm(
        &self,
        x: &ChartPoint,
        y: &ChartPoint,
        warm: Option<&LogWarmStart>,
    ) -> Result<(LogResult, LogWarmStart)> {
        let m = self.m;
        m.check_point(x.as_slice())?;
        m.check_point(y.as_slice())?;
        let xs = x.as_slice();
        let target = &y.coords;
        let mut v = match warm {
            Some(w) if w.v.len() == m.dim() => w.v.clone(),
            _ => target - &x.coords,
        };
        let mut jac = warm.and_then(|w| w.jacobian.clone());

        // an initial guess that leaves the chart is shortened until it does not
        let mut end = None;
        for _ in 0..40 {
            match self.end(xs, v.as_slice()) {
                Ok(e) => {
                    end = Some(e);
                    break;
                }
                Err(Error::PathExit { .. }) => v *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let mut r = end.ok_or(Error::NoConvergence {
            iterations: 0,
            residual: f64::INFINITY,
        })? - target;
        let mut res = r.norm();
        // the tolerance is relative for nearby targets so that small distances
        // keep their relative accuracy; it is floored at coordinate roundoff
        let scale = (target - &x.coords).norm().min(1.0);
        let goal = (self.opts.log_tolerance * scale).max(1e-13 * (1.0 + x.coords.norm()));
        let mut iterations = 0;
        let mut fresh = false;
        while res > goal {
            if iterations >= self.opts.max_iterations {
                if res <= self.opts.log_tolerance {
                    break;
                }
                return Err(Error::NoConvergence {
                    iterations,
                    residual: res,
                });
            }
            let j = match &jac {
                Some(j) => j.clone(),
                None => {
                    fresh = true;
                    let j = self.fd_jacobian(xs, v.as_slice())?;
                    jac = Some(j.clone());
                    j
                }
            };
            let dv = match j.lu().solve(&(-&r)) {
                Some(dv) if dv.iter().all(|c| c.is_finite()) => dv,
                _ if !fresh => {
                    jac = None;
                    continue;
                }
                _ => {
                    return Err(Error::NoConvergence {
                        iterations,
                        residual: res,
                    })
                }
            };
            let mut lambda = 1.0;
            let mut accepted = None;
            let polishing = res <= self.opts.log_tolerance;
            for _ in 0..if polishing { 4 } else { 30 } {
                let trial = &v + &dv * lambda;
                match self.end(xs, trial.as_slice()) {
                    Ok(e) => {
                        let rt = e - target;
                        if rt.norm() < res {
                            accepted = Some((trial, rt));
                            break;
                        }
                    }
                    Err(Error::PathExit { .. }) => {}
                    Err(e) => return Err(e),
                }
                lambda *= 0.5;
            }
            iterations += 1;
            match accepted {
                Some((vn, rn)) => {
                    let s = &vn - &v;
                    let ss = s.dot(&s);
                    if ss > 0.0 {
                        let j = jac.as_mut().expect("jacobian present");
                        let yv = &rn - &r;
                        let corr = (&yv - &*j * &s) / ss;
                        *j += corr * s.transpose();
                    }
                    fresh = false;
                    v = vn;
                    r = rn;
                    res = r.norm();
                }
                // stalled at roundoff but within the absolute tolerance
                None if polishing => break,
                None if fresh => {
                    return Err(Error::NoConvergence {
                        iterations,
                        residual: res,
                    })
                }
                None => jac = None,
            }
        }
        if let Some(limit) = self.opts.injectivity_limit {
            let norm = quadratic_norm(&m.metric_at(xs), &v);
            if norm > limit {
                return Err(Error::BeyondInjectivity { norm, limit });
            }
        }
        let warm_out = LogWarmStart {
            v: v.clone(),
            jacobian: jac,
        };
        Ok((
            LogResult {
                vector: TangentVec::new(x.clone(), v),
                residual: res,
                iterations,
            },
            warm_out,
        ))
    }

    pub fn distance(&self, x: &ChartPoint, y: &ChartPoint) -> Result<f64> {
        if x.coords == y.coords {
            self.m.check_point(x.as_slice())?;
            return Ok(0.0);
        }
        let l = self.log(x, y)?;
        Ok(quadratic_norm(&self.m.metric_at(x.as_slice()), &l.vector.components))
    }

    /// Probes the radius up to which `exp_x` stays a diffeomorphism along a
    /// fixed direction fan: radii double from 0.1 until a probe fails, then
    /// the bracket is bisected.
    pub fn injectivity_estimate(&self, x: &ChartPoint) -> Result<InjectivityEstimate> {
        self.m.check_point(x.as_slice())?;
        let g = self.m.metric_at(x.as_slice());
        let fan: Vec<DVector<f64>> = sampling::direction_fan(self.m.dim())
            .into_iter()
            .map(|d| {
                let norm = quadratic_norm(&g, &d);
                d / norm
            })
            .collect();
        let probe =
            |r: f64| -> Option<InjectivityMethod> { fan.iter().find_map(|d| self.probe_direction(x, &g, &(d * r))) };

        const R_MAX: f64 = 1e6;
        let mut lo = 0.0;
        let mut hi = 0.1;
        let mut method;
        loop {
            match probe(hi) {
                None if hi >= R_MAX => {
                    return Ok(InjectivityEstimate {
                        radius: hi,
                        method: InjectivityMethod::DomainBoundary,
                        margin: 0.0,
                    })
                }
                None => {
                    lo = hi;
                    hi *= 2.0;
                }
                Some(m) => {
                    method = m;
                    break;
                }
            }
        }
        while hi - lo > 2e-3 * hi {
            let mid = 0.5 * (lo + hi);
            match probe(mid) {
                None => lo = mid,
                Some(m) => {
                    hi = mid;
                    method = m;
                }
            }
        }
        // a positive radius always exists; report the last passing bracket end
        let radius = if lo > 0.0 { lo } else { 0.5 * hi };
        Ok(InjectivityEstimate {
            radius,
            method,
            margin: hi - lo,
        })
    }

    fn probe_direction(&self, x: &ChartPoint, g: &DMatrix<f64>, v: &DVector<f64>) -> Option<InjectivityMethod> {
        let xs = x.as_slice();
        let y = match self.end(xs, v.as_slice()) {
            Ok(y) => y,
            Err(Error::PathExit { .. }) | Err(Error::InvalidMetric { .. }) => {
                return Some(InjectivityMethod::DomainBoundary)
            }
            Err(_) => return Some(InjectivityMethod::RoundtripFailure),
        };
        if !self.m.domain().contains(y.as_slice()) {
            return Some(InjectivityMethod::DomainBoundary);
        }
        match self.fd_jacobian(xs, v.as_slice()) {
            Ok(j) if linalg::condition_number(&j) <= JACOBIAN_CONDITION_LIMIT => {}
            Ok(_) => return Some(InjectivityMethod::JacobianSingularity),
            Err(_) => return Some(InjectivityMethod::DomainBoundary),
        }
        match self.log(x, &ChartPoint::new(y)) {
            Ok(l) if quadratic_norm(g, &(&l.vector.components - v)) <= ROUNDTRIP_TOLERANCE => None,
            _ => Some(InjectivityMethod::RoundtripFailure),
        }
    }

    /// Checks `exp_x B_r(0) = B(x, r)` on samples: distances of sampled
    /// exponentials equal the tangent norms, and chart points reachable by a
    /// path shorter than `r` have logarithms shorter than that path.
    pub fn ball_identity_check(&self, x: &ChartPoint, r: f64, k: usize, seed: u64) -> Result<BallIdentityReport> {
        let est = self.injectivity_estimate(x)?;
        if !(r > 0.0 && r < est.radius) {
            return Err(Error::Precondition(format!(
                "ball radius {r} must lie in (0, {}) (injectivity estimate)",
                est.radius
            )));
        }
        let n = self.m.dim();
        let g = self.m.metric_at(x.as_slice());
        let mut rng = sampling::rng(seed);
        let mut max_rel = 0.0f64;
        for _ in 0..k {
            let rho = sampling::ball_radius(&mut rng, r, n).max(1e-3 * r);
            let v = sampling::g_unit_direction(&mut rng, &g) * rho;
            let y = self.exp(x, v.as_slice())?;
            let d = self.distance(x, &y)?;
            max_rel = max_rel.max((d - rho).abs() / rho);
        }

        let (lambda_min, _) = linalg::symmetric_extremes(&g);
        let chart_radius = r / lambda_min.sqrt();
        let mut chart_samples = 0;
        let mut violations = 0;
        let mut max_roundtrip = 0.0f64;
        let mut attempts = 0;
        while chart_samples < k && attempts < 20 * k {
            attempts += 1;
            let u = sampling::unit_direction(&mut rng, n);
            let rho = sampling::ball_radius(&mut rng, chart_radius, n);
            let y = &x.coords + u * rho;
            if !self.m.domain().contains(y.as_slice()) {
                continue;
            }
            let chord: Vec<ChartPoint> = (0..=16)
                .map(|i| ChartPoint::new(&x.coords + (&y - &x.coords) * (i as f64 / 16.0)))
                .collect();
            let length = path_length(self.m, &chord)?;
            if length >= r || length == 0.0 {
                continue;
            }
            chart_samples += 1;
            let yp = ChartPoint::new(y);
            let l = self.log(x, &yp)?;
            let norm = quadratic_norm(&g, &l.vector.components);
            if norm > length * (1.0 + 1e-6) {
                violations += 1;
            }
            let back = self.exp(x, l.vector.components.as_slice())?;
            max_roundtrip = max_roundtrip.max((back.coords - &yp.coords).norm());
        }
        Ok(BallIdentityReport {
            radius: r,
            injectivity_radius: est.radius,
            tangent_samples: k,
            max_relative_discrepancy: max_rel,
            chart_samples,
            log_norm_violations: violations,
            max_roundtrip_error: max_roundtrip,
        })
    }
}

/// Integrates the geodesic from `x` with initial velocity `v` over `s ∈ [0, 1]`.
pub fn integrate_geodesic(m: &ManifoldDescriptor, x: &ChartPoint, v: &[f64], steps: usize) -> Result<GeodesicPath> {
    GeodesicSolver::with_options(
        m,
        GeodesicOptions {
            steps,
            ..Default::default()
        },
    )
    .integrate(x, v)
}

pub fn exp_map(m: &ManifoldDescriptor, x: &ChartPoint, v: &[f64]) -> Result<ChartPoint> {
    GeodesicSolver::new(m).exp(x, v)
}

pub fn log_map(m: &ManifoldDescriptor, x: &ChartPoint, y: &ChartPoint) -> Result<LogResult> {
    GeodesicSolver::new(m).log(x, y)
}

pub fn distance(m: &ManifoldDescriptor, x: &ChartPoint, y: &ChartPoint) -> Result<f64> {
    GeodesicSolver::new(m).distance(x, y)
}

pub fn injectivity_estimate(m: &ManifoldDescriptor, x: &ChartPoint) -> Result<InjectivityEstimate> {
    GeodesicSolver::new(m).injectivity_estimate(x)
}

pub fn ball_identity_check(
    m: &ManifoldDescriptor,
    x: &ChartPoint,
    r: f64,
    k: usize,
    seed: u64,
) -> Result<BallIdentityReport> {
    GeodesicSolver::new(m).ball_identity_check(x, r, k, seed)
}

/// Trapezoidal length of the piecewise-linear chart path through `samples`.
pub fn path_length(m: &ManifoldDescriptor, samples: &[ChartPoint]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Precondition(format!(
            "path length needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    for p in samples {
        m.check_point(p.as_slice())?;
    }
    let metrics: Vec<DMatrix<f64>> = samples.iter().map(|p| m.metric_at(p.as_slice())).collect();
    let mut total = 0.0;
    for i in 0..samples.len() - 1 {
        let delta = &samples[i + 1].coords - &samples[i].coords;
        total += 0.5 * (quadratic_norm(&metrics[i], &delta) + quadratic_norm(&metrics[i + 1], &delta));
    }
    Ok(total)
}
