//! Perturbed systems `ẋ = f(x, t) + h(x, t)`: the size hypothesis on `h`,
//! the ultimate bound of an asymptotically stable equilibrium, and the
//! exponential bound with its constants `(k, γ, ζ)`.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flows::{eval_field, rk4_flow, SumField, VectorField};
use crate::geodesics::{GeodesicSolver, LogWarmStart};
use crate::linalg::quadratic_norm;
use crate::lyapunov::{BoundEstimates, BoundMode};
use crate::manifold::{ChartPoint, ManifoldDescriptor};
use crate::sampling;

/// Slack added to the exponential bound for integration and shooting error.
pub const EXP_BOUND_SLACK: f64 = 1e-6;
/// Relative allowance on the ultimate bound.
pub const ULTIMATE_MARGIN: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct PerturbedSystem {
    pub nominal: Arc<dyn VectorField>,
    pub perturbation: Arc<dyn VectorField>,
    /// Claimed bound on `‖h‖_g` over the region.
    pub delta: f64,
}

impl PerturbedSystem {
    pub fn new(nominal: Arc<dyn VectorField>, perturbation: Arc<dyn VectorField>, delta: f64) -> Result<Self> {
        if nominal.dim() != perturbation.dim() {
            return Err(Error::Dimension {
                expected: nominal.dim(),
                got: perturbation.dim(),
            });
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Precondition(format!("δ must be nonnegative, got {delta}")));
        }
        Ok(Self {
            nominal,
            perturbation,
            delta,
        })
    }

    /// `f + h`.
    pub fn combined(&self) -> SumField {
        SumField {
            a: self.nominal.clone(),
            b: self.perturbation.clone(),
        }
    }
}

/// Sampled supremum of `‖h(x, t)‖_g` over a geodesic ball and time window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HBoundReport {
    pub sup: f64,
    pub argmax_x: Vec<f64>,
    pub argmax_t: f64,
    /// Claimed `δ`, when one was given.
    pub delta: Option<f64>,
    /// `sup ≤ δ`, when a `δ` was given.
    pub holds: Option<bool>,
    pub region_radius: f64,
    pub window: (f64, f64),
    /// Random samples plus refinement evaluations.
    pub evaluations: usize,
    pub seed: u64,
}

struct HProbe<'a> {
    m: &'a ManifoldDescriptor,
    h: &'a dyn VectorField,
    xbar: &'a ChartPoint,
    g0: nalgebra::DMatrix<f64>,
    solver: GeodesicSolver<'a>,
    radius: f64,
    window: (f64, f64),
    evaluations: usize,
}

impl HProbe<'_> {
    /// Projects `(z, t)` onto the ball × window and evaluates `‖h‖_g` there.
    fn eval(&mut self, z: &mut DVector<f64>, t: &mut f64) -> Result<(f64, Vec<f64>)> {
        let norm = quadratic_norm(&self.g0, z);
        if norm > self.radius {
            *z *= self.radius / norm;
        }
        *t = t.clamp(self.window.0, self.window.1);
        let x = self.solver.exp(self.xbar, z.as_slice())?;
        let hx = eval_field(self.h, x.as_slice(), *t)?;
        let g = self.m.metric_at(x.as_slice());
        self.evaluations += 1;
        Ok((quadratic_norm(&g, &hx), x.as_slice().to_vec()))
    }
}

/// Samples `‖h‖_g` on the ball of radius `region` around `x̄` (half of the
/// samples on its boundary sphere) over `window`, then refines the best
/// samples by compass search in `(z, t)` until the step falls below 1e-9.
#[allow(clippy::too_many_arguments)]
pub fn check_h_bound(
    m: &ManifoldDescriptor,
    h: &dyn VectorField,
    xbar: &ChartPoint,
    region: f64,
    window: (f64, f64),
    n_samples: usize,
    delta: Option<f64>,
    seed: u64,
) -> Result<HBoundReport> {
    m.check_point(xbar.as_slice())?;
    if h.dim() != m.dim() {
        return Err(Error::Dimension {
            expected: m.dim(),
            got: h.dim(),
        });
    }
    if !(region > 0.0) || !(window.1 >= window.0) || n_samples == 0 {
        return Err(Error::Precondition(
            "h check needs a positive radius, an ordered window and samples".into(),
        ));
    }
    let n = m.dim();
    let mut probe = HProbe {
        m,
        h,
        xbar,
        g0: m.metric_at(xbar.as_slice()),
        solver: GeodesicSolver::new(m),
        radius: region,
        window,
        evaluations: 0,
    };
    let mut rng = sampling::rng(seed);
    let mut found: Vec<(f64, DVector<f64>, f64, Vec<f64>)> = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let r = if i % 2 == 0 {
            region
        } else {
            sampling::ball_radius(&mut rng, region, n)
        };
        let mut z = sampling::g_unit_direction(&mut rng, &probe.g0) * r;
        let mut t = window.0 + rng.random::<f64>() * (window.1 - window.0);
        let (v, x) = probe.eval(&mut z, &mut t)?;
        found.push((v, z, t, x));
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = found[0].clone();
    for start in found.into_iter().take(4) {
        let (mut v, mut z, mut t, mut x) = start;
        let mut step_z = 0.25 * region;
        let mut step_t = 0.125 * (window.1 - window.0);
        while step_z > 1e-9 * region.max(1.0) || step_t > 1e-9 {
            let mut improved = false;
            for k in 0..=n {
                for sign in [1.0, -1.0] {
                    let mut zt = z.clone();
                    let mut tt = t;
                    if k < n {
                        if step_z <= 1e-9 * region.max(1.0) {
                            continue;
                        }
                        zt[k] += sign * step_z;
                    } else {
                        if step_t <= 1e-9 {
                            continue;
                        }
                        tt += sign * step_t;
                    }
                    let (vt, xt) = probe.eval(&mut zt, &mut tt)?;
                    if vt > v {
                        (v, z, t, x) = (vt, zt, tt, xt);
                        improved = true;
                    }
                }
            }
            if !improved {
                step_z *= 0.5;
                step_t *= 0.5;
            }
        }
        if v > best.0 {
            best = (v, z, t, x);
        }
    }
    Ok(HBoundReport {
        sup: best.0,
        argmax_x: best.3,
        argmax_t: best.2,
        delta,
        holds: delta.map(|d| best.0 <= d * (1.0 + 1e-12)),
        region_radius: region,
        window,
        evaluations: probe.evaluations,
        seed,
    })
}

/// Ultimate bound `ρ(δ) = α₁⁻¹(α₃⁻¹(δ·α₄(r₁)/θ))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UltimateBound {
    pub rho: f64,
    pub delta: f64,
    pub theta: f64,
    pub r1: f64,
    pub r2: f64,
    /// Largest admissible perturbation size `θ·α₃(r₂)/α₄(r₁)`.
    pub admissible_delta: f64,
    /// `α₃⁻¹(δ·α₄(r₁)/θ)`, the radius bounding admissible initial points.
    pub initial_radius: f64,
}

pub const DEFAULT_THETA: f64 = 0.5;

/// Largest `δ` for which the ultimate bound is claimed.
pub fn admissible_delta(estimates: &BoundEstimates, theta: f64, r1: f64, r2: f64) -> Result<f64> {
    let (a3, a4) = match (&estimates.alpha3, &estimates.alpha4) {
        (Some(a3), Some(a4)) => (a3, a4),
        _ => return Err(Error::Precondition("ultimate bound needs fitted α₃ and α₄".into())),
    };
    Ok(theta * a3.eval(r2) / a4.eval(r1))
}

/// Composes the fitted envelopes; refuses `δ` beyond the admissible range.
pub fn ultimate_bound(
    sys: &PerturbedSystem,
    estimates: &BoundEstimates,
    theta: f64,
    r1: f64,
    r2: f64,
) -> Result<UltimateBound> {
    if estimates.mode != BoundMode::Asymptotic || !estimates.passed {
        return Err(Error::Precondition(
            "ultimate bound needs a verified asymptotic triple".into(),
        ));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Precondition(format!("θ must lie in (0, 1), got {theta}")));
    }
    if !(r1 > 0.0 && r1 < r2 && r2 <= estimates.region_radius * (1.0 + 1e-12)) {
        return Err(Error::Precondition(format!(
            "radii must satisfy 0 < r₁ < r₂ ≤ {} (verified region), got {r1} and {r2}",
            estimates.region_radius
        )));
    }
    let (a1, a3, a4) = match (&estimates.alpha1, &estimates.alpha3, &estimates.alpha4) {
        (Some(a1), Some(a3), Some(a4)) => (a1, a3, a4),
        _ => return Err(Error::Precondition("ultimate bound needs fitted α₁, α₃ and α₄".into())),
    };
    let admissible = admissible_delta(estimates, theta, r1, r2)?;
    if sys.delta > admissible {
        return Err(Error::DeltaTooLarge {
            delta: sys.delta,
            admissible,
        });
    }
    let initial_radius = a3.inverse(sys.delta * a4.eval(r1) / theta)?;
    let rho = a1.inverse(initial_radius)?;
    Ok(UltimateBound {
        rho,
        delta: sys.delta,
        theta,
        r1,
        r2,
        admissible_delta: admissible,
        initial_radius,
    })
}

/// Initial conditions and horizon of a verification ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSpec {
    pub samples: usize,
    /// Initial distances are stratified over `(0, initial_radius]`.
    pub initial_radius: f64,
    pub t0: f64,
    pub horizon: f64,
    pub steps: usize,
    /// Distance evaluations per trajectory (evenly spaced, plus `t₀`).
    pub checkpoints: usize,
    pub seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            samples: 64,
            initial_radius: 0.5,
            t0: 0.0,
            horizon: 10.0,
            steps: 512,
            checkpoints: 64,
            seed: 42,
        }
    }
}

/// Distances `d(x(t), x̄)` of one trajectory of `f` at evenly spaced times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceProfile {
    pub x0: Vec<f64>,
    pub d0: f64,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
}

/// Integrates `f` from `x0` and measures the distance to `x̄` at
/// `checkpoints + 1` times of the step grid.
#[allow(clippy::too_many_arguments)]
pub fn distance_profile(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    xbar: &ChartPoint,
    x0: &ChartPoint,
    t0: f64,
    horizon: f64,
    steps: usize,
    checkpoints: usize,
) -> Result<DistanceProfile> {
    let domain = m.domain();
    let inside = |x: &[f64]| domain.contains(x);
    let traj = rk4_flow(f, x0.as_slice(), t0, t0 + horizon, steps, &inside)?;
    let solver = GeodesicSolver::new(m);
    let g0 = m.metric_at(xbar.as_slice());
    let stride = (steps / checkpoints.max(1)).max(1);
    let mut idx: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *idx.last().unwrap() != steps {
        idx.push(steps);
    }
    let mut warm: Option<LogWarmStart> = None;
    let mut times = Vec::with_capacity(idx.len());
    let mut distances = Vec::with_capacity(idx.len());
    for i in idx {
        let p = ChartPoint::new(traj.points[i].clone());
        let d = if p.coords == xbar.coords {
            0.0
        } else {
            let (l, w) = solver.log_warm(xbar, &p, warm.as_ref())?;
            warm = Some(w);
            quadratic_norm(&g0, &l.vector.components)
        };
        times.push(traj.times[i]);
        distances.push(d);
    }
    Ok(DistanceProfile {
        x0: x0.as_slice().to_vec(),
        d0: distances[0],
        times,
        distances,
    })
}

fn initial_points(m: &ManifoldDescriptor, xbar: &ChartPoint, spec: &EnsembleSpec) -> Result<Vec<(f64, ChartPoint)>> {
    if spec.samples == 0 || !(spec.initial_radius > 0.0) || !(spec.horizon > 0.0) || spec.steps == 0 {
        return Err(Error::Precondition(
            "ensemble needs samples, a positive initial radius, horizon and steps".into(),
        ));
    }
    let g0 = m.metric_at(xbar.as_slice());
    let solver = GeodesicSolver::new(m);
    let mut rng = sampling::rng(spec.seed);
    (0..spec.samples)
        .map(|i| {
            let d0 = spec.initial_radius * (i + 1) as f64 / spec.samples as f64;
            let u = sampling::g_unit_direction(&mut rng, &g0);
            Ok((d0, solver.exp(xbar, (u * d0).as_slice())?))
        })
        .collect()
}

/// A trajectory that could not be evaluated (left the chart, shooting
/// failed).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedTrajectory {
    pub x0: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UltimateBoundReport {
    pub rho: f64,
    pub delta: f64,
    /// `ρ·(1 + margin)`.
    pub threshold: f64,
    /// Largest distance over `[t₀ + T_s/2, t₀ + T_s]` across the ensemble.
    pub tail_sup: f64,
    pub settle_time: f64,
    pub trajectories: usize,
    pub failed: Vec<FailedTrajectory>,
    pub passed: bool,
    pub seed: u64,
}

/// Simulates `f + h` from initial points within `spec.initial_radius` and
/// checks the sup of the distance over the second half of the settle window
/// against `ρ(δ)`.
pub fn verify_ultimate_bound(
    m: &ManifoldDescriptor,
    sys: &PerturbedSystem,
    xbar: &ChartPoint,
    bound: &UltimateBound,
    spec: &EnsembleSpec,
) -> Result<UltimateBoundReport> {
    let starts = initial_points(m, xbar, spec)?;
    let total = sys.combined();
    let mut tail_sup = 0.0f64;
    let mut failed = Vec::new();
    for (_, x0) in &starts {
        match distance_profile(m, &total, xbar, x0, spec.t0, spec.horizon, spec.steps, spec.checkpoints) {
            Ok(p) => {
                let half = spec.t0 + 0.5 * spec.horizon;
                for (t, d) in p.times.iter().zip(&p.distances) {
                    if *t >= half - 1e-12 {
                        tail_sup = tail_sup.max(*d);
                    }
                }
            }
            Err(e) => failed.push(FailedTrajectory {
                x0: x0.as_slice().to_vec(),
                reason: e.to_string(),
            }),
        }
    }
    let threshold = bound.rho * (1.0 + ULTIMATE_MARGIN);
    Ok(UltimateBoundReport {
        rho: bound.rho,
        delta: sys.delta,
        threshold,
        tail_sup,
        settle_time: spec.horizon,
        trajectories: starts.len(),
        passed: failed.is_empty() && tail_sup <= threshold,
        failed,
        seed: spec.seed,
    })
}

/// `k = √(λ₂/λ₁)`, `γ = λ₃/(2λ₂)`, `ζ = λ₄λ₂/(λ₃λ₁)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpBoundConstants {
    pub k: f64,
    pub gamma: f64,
    pub zeta: f64,
    /// `(λ₃/λ₄)·√(λ₁/λ₂)`: the bound is claimed for `δ ≤ ratio · d(x₀, x̄)`.
    pub hypothesis_ratio: f64,
}

impl ExpBoundConstants {
    pub fn from_lambdas(l: [f64; 4]) -> Result<Self> {
        if let Some(bad) = l.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Precondition(format!(
                "exponential constants need positive finite λ's, got {bad} in {l:?}"
            )));
        }
        let [l1, l2, l3, l4] = l;
        Ok(Self {
            k: (l2 / l1).sqrt(),
            gamma: l3 / (2.0 * l2),
            zeta: l4 * l2 / (l3 * l1),
            hypothesis_ratio: (l3 / l4) * (l1 / l2).sqrt(),
        })
    }

    /// `k·e^(−γ(t − t₀))·d₀ + ζ·δ`.
    pub fn bound(&self, elapsed: f64, d0: f64, delta: f64) -> f64 {
        self.k * (-self.gamma * elapsed).exp() * d0 + self.zeta * delta
    }
}

pub fn exp_bound_constants(estimates: &BoundEstimates) -> Result<ExpBoundConstants> {
    match (estimates.mode, estimates.lambdas) {
        (BoundMode::Exponential, Some(l)) => ExpBoundConstants::from_lambdas(l),
        _ => Err(Error::Precondition(
            "exponential constants need an exponential triple".into(),
        )),
    }
}

/// An initial point dropped because `δ` exceeds `ratio · d(x₀, x̄)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedPoint {
    pub x0: Vec<f64>,
    pub d0: f64,
    /// Smallest `d₀` the hypothesis allows.
    pub required_d0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpBoundReport {
    pub constants: ExpBoundConstants,
    pub delta: f64,
    pub slack: f64,
    pub trajectories: usize,
    pub checked: usize,
    pub excluded: Vec<ExcludedPoint>,
    pub failed: Vec<FailedTrajectory>,
    /// Smallest `bound − d` over all checked (trajectory, time) pairs.
    pub worst_margin: f64,
    pub worst_x0: Option<Vec<f64>>,
    pub worst_time: Option<f64>,
    pub grid_times: usize,
    pub passed: bool,
    pub seed: u64,
}

/// Checks `d(x(t), x̄) ≤ k·e^(−γ(t−t₀))·d₀ + ζδ + slack` at every grid time
/// of every trajectory whose start satisfies the `δ` hypothesis.
pub fn verify_exp_bound(
    m: &ManifoldDescriptor,
    sys: &PerturbedSystem,
    xbar: &ChartPoint,
    consts: &ExpBoundConstants,
    spec: &EnsembleSpec,
) -> Result<ExpBoundReport> {
    // the hypothesis δ ≤ ratio·d₀ must hold somewhere in the ensemble
    let admissible = consts.hypothesis_ratio * spec.initial_radius;
    if sys.delta > admissible {
        return Err(Error::DeltaTooLarge {
            delta: sys.delta,
            admissible,
        });
    }
    let starts = initial_points(m, xbar, spec)?;
    let total = sys.combined();
    let mut report = ExpBoundReport {
        constants: *consts,
        delta: sys.delta,
        slack: EXP_BOUND_SLACK,
        trajectories: starts.len(),
        checked: 0,
        excluded: Vec::new(),
        failed: Vec::new(),
        worst_margin: f64::INFINITY,
        worst_x0: None,
        worst_time: None,
        grid_times: 0,
        passed: false,
        seed: spec.seed,
    };
    for (d0, x0) in &starts {
        let required = sys.delta / consts.hypothesis_ratio;
        if *d0 < required {
            report.excluded.push(ExcludedPoint {
                x0: x0.as_slice().to_vec(),
                d0: *d0,
                required_d0: required,
            });
            continue;
        }
        let p = match distance_profile(m, &total, xbar, x0, spec.t0, spec.horizon, spec.steps, spec.checkpoints) {
            Ok(p) => p,
            Err(e) => {
                report.failed.push(FailedTrajectory {
                    x0: x0.as_slice().to_vec(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        report.checked += 1;
        report.grid_times = p.times.len();
        for (t, d) in p.times.iter().zip(&p.distances) {
            let margin = consts.bound(t - spec.t0, p.d0, sys.delta) + EXP_BOUND_SLACK - d;
            if margin < report.worst_margin {
                report.worst_margin = margin;
                report.worst_x0 = Some(p.x0.clone());
                report.worst_time = Some(*t);
            }
        }
    }
    report.passed = report.failed.is_empty() && report.checked > 0 && report.worst_margin >= 0.0;
    Ok(report)
}
