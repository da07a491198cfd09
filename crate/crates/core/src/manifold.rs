//! Manifolds described in a single coordinate chart: the metric tensor,
//! its inverse, Christoffel symbols and Riemannian norms.
//!
//! A chart domain is an open axis-aligned box. The metric is supplied either
//! as expression strings (exact first derivatives through dual numbers) or as
//! a native closure (derivatives by central differences with step
//! `1e-5·(1 + |x_k|)`).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, ExprError, Params};
use crate::linalg::{self, METRIC_CONDITION_LIMIT};

/// Symmetry tolerance (relative to the largest entry) for metric validation.
pub const METRIC_SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct ChartId(pub u32);

/// A point given by its chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub coords: DVector<f64>,
    pub chart: ChartId,
}

impl ChartPoint {
    pub fn new(coords: DVector<f64>) -> Self {
        Self {
            coords,
            chart: ChartId::default(),
        }
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(coords))
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coords.as_slice()
    }
}

impl From<Vec<f64>> for ChartPoint {
    fn from(v: Vec<f64>) -> Self {
        Self::new(DVector::from_vec(v))
    }
}

/// A tangent vector together with its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    pub base: ChartPoint,
    pub components: DVector<f64>,
}

impl TangentVec {
    pub fn new(base: ChartPoint, components: DVector<f64>) -> Self {
        Self { base, components }
    }
}

/// Open box `lower < x < upper`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ChartDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Precondition(format!(
                "chart box must satisfy lower < upper, got {lower:?} / {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lower.len()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l < *v && *v < *u)
    }

    /// Chart-coordinate distance to the nearest face (negative outside).
    pub fn margin(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l).min(u - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }
}

/// Source of metric coefficients `g_ij(x)`.
pub trait MetricTensor: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes the row-major `n×n` matrix at `x` into `out`.
    fn fill(&self, x: &[f64], out: &mut [f64]);

    /// Writes `∂_k g_ij` at `out[(k·n + i)·n + j]`. Returns `false` when exact
    /// derivatives are unavailable, in which case callers difference `fill`.
    fn fill_partials(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// `fill` and `fill_partials` in one call; returns the latter's flag.
    fn fill_with_partials(&self, x: &[f64], g: &mut [f64], dg: &mut [f64]) -> bool {
        self.fill(x, g);
        self.fill_partials(x, dg)
    }

    /// Expression sources of the entries, when the metric has them.
    fn sources(&self) -> Option<Vec<String>> {
        None
    }

    /// True when the coefficients provably do not depend on `x`.
    fn is_constant(&self) -> bool {
        false
    }
}

/// Metric with entries given as expressions in `x1..xn`.
#[derive(Debug, Clone)]
pub struct ExprMetric {
    dim: usize,
    entries: Vec<CompiledExpr>,
}

impl ExprMetric {
    /// `rows` is the full `n×n` table of entry expressions.
    pub fn new<S: AsRef<str>>(rows: &[Vec<S>], params: &Params) -> Result<Self, ExprError> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(ExprError::Syntax {
                    offset: 0,
                    found: format!("metric row with {} entries", row.len()),
                    expected: vec![format!("{dim} entries per row")],
                });
            }
            for src in row {
                let e = CompiledExpr::parse(src.as_ref(), dim, params)?;
                if e.uses_time() {
                    return Err(ExprError::Unbound("t".into()));
                }
                entries.push(e);
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn entry(&self, i: usize, j: usize) -> &CompiledExpr {
        &self.entries[i * self.dim + j]
    }
}

impl MetricTensor for ExprMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fill(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.eval(x, 0.0);
        }
    }

    fn fill_partials(&self, x: &[f64], out: &mut [f64]) -> bool {
        let n = self.dim;
        for k in 0..n {
            for (idx, e) in self.entries.iter().enumerate() {
                out[k * n * n + idx] = if e.uses_coords() {
                    e.eval_partial(x, k, 0.0).1
                } else {
                    0.0
                };
            }
        }
        true
    }

    fn fill_with_partials(&self, x: &[f64], g: &mut [f64], dg: &mut [f64]) -> bool {
        let n = self.dim;
        for (idx, e) in self.entries.iter().enumerate() {
            let mut value = None;
            for k in 0..n {
                dg[k * n * n + idx] = if e.uses_var(k) {
                    let (v, d) = e.eval_partial(x, k, 0.0);
                    value = Some(v);
                    d
                } else {
                    0.0
                };
            }
            g[idx] = value.unwrap_or_else(|| e.eval(x, 0.0));
        }
        true
    }

    fn sources(&self) -> Option<Vec<String>> {
        Some(self.entries.iter().map(|e| e.source().to_string()).collect())
    }

    fn is_constant(&self) -> bool {
        self.entries.iter().all(|e| !e.uses_coords())
    }
}

type MetricFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// Metric backed by a Rust closure; derivatives by central differences.
#[derive(Clone)]
pub struct FnMetric {
    dim: usize,
    f: Arc<MetricFn>,
}

impl FnMetric {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }
}

impl fmt::Debug for FnMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnMetric").field("dim", &self.dim).finish()
    }
}

impl MetricTensor for FnMetric {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fill(&self, x: &[f64], out: &mut [f64]) {
        let g = (self.f)(x);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i * self.dim + j] = g[(i, j)];
            }
        }
    }
}

/// Closed-form geometry used as an independent oracle in tests and reports.
pub trait ClosedForm: Send + Sync + fmt::Debug {
    fn exp(&self, x: &[f64], v: &[f64]) -> Option<Vec<f64>>;
    fn log(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>>;
    fn distance(&self, x: &[f64], y: &[f64]) -> Option<f64>;
}

/// How metric partial derivatives are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeMode {
    Dual,
    FiniteDifference,
}

/// A Riemannian manifold `(M, g)` in one chart.
#[derive(Debug, Clone)]
pub struct ManifoldDescriptor {
    name: String,
    metric: Arc<dyn MetricTensor>,
    domain: ChartDomain,
    oracle: Option<Arc<dyn ClosedForm>>,
    derivatives: DerivativeMode,
}

impl ManifoldDescriptor {
    pub fn new(name: impl Into<String>, metric: Arc<dyn MetricTensor>, domain: ChartDomain) -> Result<Self> {
        let dim = metric.dim();
        if dim == 0 {
            return Err(Error::Precondition("manifold dimension must be at least 1".into()));
        }
        if domain.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: domain.dim(),
            });
        }
        let probe = domain.center();
        let mut scratch = vec![0.0; dim * dim * dim];
        let derivatives = if metric.fill_partials(&probe, &mut scratch) {
            DerivativeMode::Dual
        } else {
            DerivativeMode::FiniteDifference
        };
        Ok(Self {
            name: name.into(),
            metric,
            domain,
            oracle: None,
            derivatives,
        })
    }

    /// Metric given by expression strings.
    pub fn from_expressions<S: AsRef<str>>(
        name: impl Into<String>,
        rows: &[Vec<S>],
        domain: ChartDomain,
        params: &Params,
    ) -> Result<Self> {
        let metric = ExprMetric::new(rows, params)?;
        Self::new(name, Arc::new(metric), domain)
    }

    pub fn with_oracle(mut self, oracle: Arc<dyn ClosedForm>) -> Self {
        self.oracle = Some(oracle);
        self
    }

    /// Ignore exact derivatives and difference the metric instead.
    pub fn force_finite_differences(mut self) -> Self {
        self.derivatives = DerivativeMode::FiniteDifference;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn domain(&self) -> &ChartDomain {
        &self.domain
    }

    pub fn metric_tensor(&self) -> &dyn MetricTensor {
        self.metric.as_ref()
    }

    pub fn oracle(&self) -> Option<&dyn ClosedForm> {
        self.oracle.as_deref()
    }

    pub fn derivative_mode(&self) -> DerivativeMode {
        self.derivatives
    }

    /// Constant coefficients: geodesics are straight chart lines.
    pub fn has_constant_metric(&self) -> bool {
        self.metric.is_constant()
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if !self.domain.contains(x) {
            return Err(Error::OutsideDomain { point: x.to_vec() });
        }
        Ok(())
    }

    /// Raw metric matrix without validation.
    pub fn metric_at(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut buf = vec![0.0; n * n];
        self.metric.fill(x, &mut buf);
        DMatrix::from_row_slice(n, n, &buf)
    }

    /// Metric and its partials in one pass, using the configured mode.
    pub(crate) fn fill_with_partials(&self, x: &[f64], g: &mut [f64], dg: &mut [f64], scratch: &mut Scratch) {
        if self.derivatives == DerivativeMode::Dual && self.metric.fill_with_partials(x, g, dg) {
            return;
        }
        self.metric.fill(x, g);
        fd_partials(self.metric.as_ref(), x, dg, scratch, None);
    }

    /// `∂_k g_ij` written as in [`MetricTensor::fill_partials`], using the
    /// configured derivative mode.
    pub(crate) fn fill_partials(&self, x: &[f64], out: &mut [f64], scratch: &mut Scratch) {
        if self.derivatives == DerivativeMode::Dual && self.metric.fill_partials(x, out) {
            return;
        }
        fd_partials(self.metric.as_ref(), x, out, scratch, None);
    }
}

/// Default central-difference step for coordinate `x_k`.
#[inline]
pub fn fd_step(xk: f64) -> f64 {
    1e-5 * (1.0 + xk.abs())
}

/// Reusable buffers for finite differencing the metric.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    point: Vec<f64>,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

fn fd_partials(metric: &dyn MetricTensor, x: &[f64], out: &mut [f64], s: &mut Scratch, step: Option<f64>) {
    let n = metric.dim();
    s.point.clear();
    s.point.extend_from_slice(x);
    s.plus.resize(n * n, 0.0);
    s.minus.resize(n * n, 0.0);
    for k in 0..n {
        let h = step.unwrap_or_else(|| fd_step(x[k]));
        s.point[k] = x[k] + h;
        metric.fill(&s.point, &mut s.plus);
        s.point[k] = x[k] - h;
        metric.fill(&s.point, &mut s.minus);
        s.point[k] = x[k];
        for idx in 0..n * n {
            out[k * n * n + idx] = (s.plus[idx] - s.minus[idx]) / (2.0 * h);
        }
    }
}

fn validate_metric(x: &[f64], g: &DMatrix<f64>) -> Result<()> {
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidMetric {
            point: x.to_vec(),
            reason: "non-finite entry".into(),
        });
    }
    let asym = (g - g.transpose()).abs().max();
    if asym > METRIC_SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::InvalidMetric {
            point: x.to_vec(),
            reason: format!("not symmetric (max asymmetry {asym:e})"),
        });
    }
    let (lo, hi) = linalg::symmetric_extremes(g);
    if !(lo > 0.0) {
        return Err(Error::InvalidMetric {
            point: x.to_vec(),
            reason: format!("not positive definite (min eigenvalue {lo:e})"),
        });
    }
    if hi / lo > METRIC_CONDITION_LIMIT {
        return Err(Error::InvalidMetric {
            point: x.to_vec(),
            reason: format!("condition number {:e} exceeds {METRIC_CONDITION_LIMIT:e}", hi / lo),
        });
    }
    Ok(())
}

/// The metric matrix `g_ij(x)`, validated symmetric positive definite.
pub fn eval_metric(m: &ManifoldDescriptor, x: &ChartPoint) -> Result<DMatrix<f64>> {
    m.check_point(x.as_slice())?;
    let g = m.metric_at(x.as_slice());
    validate_metric(x.as_slice(), &g)?;
    Ok(g)
}

/// Inverse metric `g^ij(x)`.
pub fn inverse_metric(m: &ManifoldDescriptor, x: &ChartPoint) -> Result<DMatrix<f64>> {
    let g = eval_metric(m, x)?;
    g.clone().try_inverse().ok_or(Error::Singular {
        condition: f64::INFINITY,
    })
}

/// Partial derivatives `∂_k g` as one matrix per coordinate.
pub fn metric_partials(m: &ManifoldDescriptor, x: &ChartPoint) -> Result<Vec<DMatrix<f64>>> {
    check_fd_margin(m, x.as_slice())?;
    let n = m.dim();
    let mut buf = vec![0.0; n * n * n];
    m.fill_partials(x.as_slice(), &mut buf, &mut Scratch::default());
    Ok((0..n)
        .map(|k| DMatrix::from_row_slice(n, n, &buf[k * n * n..(k + 1) * n * n]))
        .collect())
}

fn check_fd_margin(m: &ManifoldDescriptor, x: &[f64]) -> Result<()> {
    m.check_point(x)?;
    if m.derivative_mode() == DerivativeMode::FiniteDifference {
        let need = x.iter().map(|v| fd_step(*v)).fold(0.0, f64::max);
        if m.domain().margin(x) <= need {
            return Err(Error::InsufficientMargin {
                point: x.to_vec(),
                margin: need,
            });
        }
    }
    Ok(())
}

/// Christoffel symbols of the second kind, `Γ^i_{jk}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    /// Largest `|Γ^i_{jk} − Γ^i_{kj}|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    worst = worst.max((self.get(i, j, k) - self.get(i, k, j)).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `Γ^i_{jk} a^j b^k`.
    pub fn contract(&self, a: &[f64], b: &[f64]) -> DVector<f64> {
        let n = self.dim;
        DVector::from_fn(n, |i, _| {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    s += self.get(i, j, k) * a[j] * b[k];
                }
            }
            s
        })
    }
}

/// `Γ^i_{jk} = ½ g^{il} (∂_k g_{jl} + ∂_j g_{kl} − ∂_l g_{jk})`.
pub fn christoffel(m: &ManifoldDescriptor, x: &ChartPoint) -> Result<Christoffel> {
    let g = eval_metric(m, x)?;
    let dg = metric_partials(m, x)?;
    let condition = linalg::condition_number(&g);
    let ginv = g.try_inverse().ok_or(Error::Singular { condition })?;
    let n = m.dim();
    // first kind: Γ_{l,jk}
    let first = |l: usize, j: usize, k: usize| 0.5 * (dg[k][(j, l)] + dg[j][(k, l)] - dg[l][(j, k)]);
    let mut data = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                data[(i * n + j) * n + k] = (0..n).map(|l| ginv[(i, l)] * first(l, j, k)).sum();
            }
        }
    }
    Ok(Christoffel { dim: n, data })
}

/// `‖v‖_g = √(vᵀ g(x) v)`.
pub fn riemannian_norm(m: &ManifoldDescriptor, v: &TangentVec) -> Result<f64> {
    if v.components.len() != m.dim() {
        return Err(Error::Dimension {
            expected: m.dim(),
            got: v.components.len(),
        });
    }
    let g = eval_metric(m, &v.base)?;
    Ok(linalg::quadratic_norm(&g, &v.components))
}

/// Richardson self-test of the differenced metric: the estimated error of
/// the step-`h/2` central difference, `max |D_h − D_{h/2}| / 3`.
pub fn metric_derivative_check(m: &ManifoldDescriptor, x: &ChartPoint, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidStep(h));
    }
    m.check_point(x.as_slice())?;
    if m.domain().margin(x.as_slice()) <= 2.0 * h {
        return Err(Error::InsufficientMargin {
            point: x.as_slice().to_vec(),
            margin: 2.0 * h,
        });
    }
    let n = m.dim();
    let mut coarse = vec![0.0; n * n * n];
    let mut fine = vec![0.0; n * n * n];
    let mut s = Scratch::default();
    fd_partials(m.metric_tensor(), x.as_slice(), &mut coarse, &mut s, Some(h));
    fd_partials(m.metric_tensor(), x.as_slice(), &mut fine, &mut s, Some(0.5 * h));
    Ok(coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs() / 3.0)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn sphere() -> ManifoldDescriptor {
        ManifoldDescriptor::from_expressions(
            "sphere",
            &[vec!["1", "0"], vec!["0", "sin(x1)^2"]],
            ChartDomain::new(vec![0.0, -2.0 * PI], vec![PI, 2.0 * PI]).unwrap(),
            &Params::new(),
        )
        .unwrap()
    }

    fn euclid(n: usize) -> ManifoldDescriptor {
        let rows: Vec<Vec<&str>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { "1" } else { "0" }).collect())
            .collect();
        ManifoldDescriptor::from_expressions("euclid", &rows, ChartDomain::cube(n, -10.0, 10.0), &Params::new())
            .unwrap()
    }

    fn poincare() -> ManifoldDescriptor {
        let e = "4/(1-(x1^2+x2^2))^2";
        ManifoldDescriptor::from_expressions(
            "disk",
            &[vec![e, "0"], vec!["0", e]],
            ChartDomain::cube(2, -0.7, 0.7),
            &Params::new(),
        )
        .unwrap()
    }

    #[test]
    fn metric_examples() {
        let g = eval_metric(&euclid(2), &ChartPoint::from_slice(&[1.0, -3.0])).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
        let g = eval_metric(&sphere(), &ChartPoint::from_slice(&[FRAC_PI_2, 0.0])).unwrap();
        assert!((g - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        let g = eval_metric(&poincare(), &ChartPoint::from_slice(&[0.0, 0.0])).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2) * 4.0);
    }

    #[test]
    fn metric_errors() {
        let err = eval_metric(&sphere(), &ChartPoint::from_slice(&[-0.1, 0.0])).unwrap_err();
        assert!(matches!(err, Error::OutsideDomain { .. }));
        let bad = ManifoldDescriptor::from_expressions(
            "bad",
            &[vec!["1", "2"], vec!["2", "1"]],
            ChartDomain::cube(2, -1.0, 1.0),
            &Params::new(),
        )
        .unwrap();
        let err = eval_metric(&bad, &ChartPoint::from_slice(&[0.5, 0.25])).unwrap_err();
        match err {
            Error::InvalidMetric { point, .. } => assert_eq!(point, vec![0.5, 0.25]),
            e => panic!("{e:?}"),
        }
        let asym = ManifoldDescriptor::from_expressions(
            "asym",
            &[vec!["1", "0.1"], vec!["0", "1"]],
            ChartDomain::cube(2, -1.0, 1.0),
            &Params::new(),
        )
        .unwrap();
        assert!(eval_metric(&asym, &ChartPoint::from_slice(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn christoffel_examples() {
        let c = christoffel(&euclid(2), &ChartPoint::from_slice(&[0.3, 0.4])).unwrap();
        assert_eq!(c.max_abs(), 0.0);

        let x = ChartPoint::from_slice(&[FRAC_PI_4, 0.3]);
        let c = christoffel(&sphere(), &x).unwrap();
        assert!((c.get(0, 1, 1) + 0.5).abs() < 1e-12);
        // Γ^φ_{θφ} = cot θ = 1 at π/4
        assert!((c.get(1, 0, 1) - 1.0).abs() < 1e-12);
        assert!(c.asymmetry() < 1e-12);

        let c = christoffel(&poincare(), &ChartPoint::from_slice(&[0.0, 0.0])).unwrap();
        assert!(c.max_abs() < 1e-14);
    }

    #[test]
    fn sphere_christoffel_against_independent_differences() {
        // Γ^θ_{φφ} = −½ g^{θθ} ∂_θ g_φφ, differenced by hand at h = 1e-6
        let th = FRAC_PI_4;
        let h = 1e-6;
        let dg = ((th + h).sin().powi(2) - (th - h).sin().powi(2)) / (2.0 * h);
        let expected = -0.5 * dg;
        let c = christoffel(&sphere(), &ChartPoint::from_slice(&[th, 1.0])).unwrap();
        assert!((c.get(0, 1, 1) - expected).abs() < 1e-9);
        assert!((expected + 0.5).abs() < 1e-9);
    }

    #[test]
    fn fd_and_dual_christoffels_agree() {
        let x = ChartPoint::from_slice(&[1.1, 0.2]);
        let dual = christoffel(&sphere(), &x).unwrap();
        let fd = christoffel(&sphere().force_finite_differences(), &x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert!((dual.get(i, j, k) - fd.get(i, j, k)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn christoffel_needs_margin_for_differences() {
        let m = euclid(2).force_finite_differences();
        let x = ChartPoint::from_slice(&[10.0 - 1e-6, 0.0]);
        assert!(matches!(christoffel(&m, &x), Err(Error::InsufficientMargin { .. })));
    }

    #[test]
    fn norm_examples() {
        let v = TangentVec::new(ChartPoint::from_slice(&[0.0, 0.0]), DVector::from_vec(vec![3.0, 4.0]));
        assert_eq!(riemannian_norm(&euclid(2), &v).unwrap(), 5.0);
        let v = TangentVec::new(
            ChartPoint::from_slice(&[FRAC_PI_2, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
        );
        assert!((riemannian_norm(&sphere(), &v).unwrap() - 1.0).abs() < 1e-15);
        let v = TangentVec::new(ChartPoint::from_slice(&[0.0, 0.0]), DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(riemannian_norm(&poincare(), &v).unwrap(), 2.0);
    }

    #[test]
    fn derivative_check_examples() {
        let x = ChartPoint::from_slice(&[0.2, 0.1]);
        assert_eq!(metric_derivative_check(&euclid(2), &x, 1e-3).unwrap(), 0.0);
        let x = ChartPoint::from_slice(&[1.0, 0.0]);
        assert!(metric_derivative_check(&sphere(), &x, 1e-3).unwrap() <= 1e-6);
        assert!(matches!(
            metric_derivative_check(&sphere(), &x, 0.0),
            Err(Error::InvalidStep(_))
        ));
    }

    #[test]
    fn closure_metric_uses_differences() {
        let m = ManifoldDescriptor::new(
            "scaled",
            Arc::new(FnMetric::new(2, |_| DMatrix::identity(2, 2) * 9.0)),
            ChartDomain::cube(2, -1.0, 1.0),
        )
        .unwrap();
        assert_eq!(m.derivative_mode(), DerivativeMode::FiniteDifference);
        let c = christoffel(&m, &ChartPoint::from_slice(&[0.1, 0.2])).unwrap();
        assert!(c.max_abs() < 1e-10);
    }
}
