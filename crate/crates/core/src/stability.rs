//! Empirical stability classification of an equilibrium and the comparison
//! functions that witness it.
//!
//! All fits are envelopes, never regressions: a fitted class-K function lies
//! on or above every observed `(d₀, sup_t d)` pair, a class-KL grid lies on
//! or above every observed distance, and an exponential fit `K·d₀·e^(−λs)`
//! dominates every sample.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flows::{eval_field, rk4_flow, VectorField};
use crate::geodesics::{GeodesicSolver, LogWarmStart};
use crate::linalg::quadratic_norm;
use crate::manifold::{ChartPoint, ManifoldDescriptor};
use crate::sampling;

/// Additive slope that makes monotone envelopes strictly increasing.
pub const SLOPE_FLOOR: f64 = 1e-9;
/// Relative gap that makes lower envelopes strictly increasing.
const LOWER_STRICTNESS: f64 = 1e-9;

/// Upper envelope values at sorted radii: running maximum, then lifted so
/// every segment rises by at least `SLOPE_FLOOR · Δr`.
fn monotone_majorant(radii: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut prev_r = 0.0;
    let mut prev_v = 0.0f64;
    for (r, v) in radii.iter().zip(values) {
        let running = v.max(prev_v);
        let floored = running.max(prev_v + SLOPE_FLOOR * (r - prev_r));
        out.push(floored);
        prev_r = *r;
        prev_v = floored;
    }
    out
}

/// Sorts `(r, y)` pairs by `r` (dropping `r ≤ 0`) and merges equal radii
/// with `merge`.
fn sorted_merged(points: &[(f64, f64)], merge: fn(f64, f64) -> f64) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|(r, _)| *r > 0.0).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (r, y) in pts {
        match out.last_mut() {
            Some(last) if last.0 == r => last.1 = merge(last.1, y),
            _ => out.push((r, y)),
        }
    }
    out
}

/// Strictly increasing piecewise-linear function through `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonK {
    knots: Vec<(f64, f64)>,
}

impl ComparisonK {
    pub fn from_knots(mut knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.first() != Some(&(0.0, 0.0)) {
            knots.insert(0, (0.0, 0.0));
        }
        if knots.len() < 2 {
            return Err(Error::FitRefused(
                "a class-K function needs at least one knot beyond 0".into(),
            ));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) || !w[1].1.is_finite() {
                return Err(Error::FitRefused(format!(
                    "knots must be strictly increasing, got {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { knots })
    }

    /// Smallest class-K function (in the piecewise-linear family) lying on
    /// or above every `(r, y)` pair.
    pub fn upper_envelope(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::FitRefused("empty ensemble".into()));
        }
        if let Some(p) = points.iter().find(|(r, y)| !r.is_finite() || !y.is_finite()) {
            return Err(Error::FitRefused(format!("unbounded envelope at sample {p:?}")));
        }
        let pts = sorted_merged(points, f64::max);
        if pts.is_empty() {
            return Err(Error::FitRefused("no sample with positive radius".into()));
        }
        let radii: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let vals = monotone_majorant(&radii, &ys);
        Self::from_knots(radii.into_iter().zip(vals).collect())
    }

    /// Largest class-K function (in the piecewise-linear family) lying on
    /// or below every `(r, y)` pair; refused when a value is not positive.
    pub fn lower_envelope(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::FitRefused("empty sample set".into()));
        }
        let pts = sorted_merged(points, f64::min);
        if let Some(p) = pts.iter().find(|(_, y)| !(*y > 0.0) || !y.is_finite()) {
            return Err(Error::FitRefused(format!(
                "lower envelope degenerates: value {} at radius {}",
                p.1, p.0
            )));
        }
        let mut vals = vec![0.0; pts.len()];
        let mut next = f64::INFINITY;
        for i in (0..pts.len()).rev() {
            let v = pts[i].1.min(next * (1.0 - LOWER_STRICTNESS));
            vals[i] = v;
            next = v;
        }
        Self::from_knots(pts.iter().map(|p| p.0).zip(vals).collect())
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Largest radius backed by a sample.
    pub fn max_radius(&self) -> f64 {
        self.knots.last().unwrap().0
    }

    pub fn max_value(&self) -> f64 {
        self.knots.last().unwrap().1
    }

    /// Linear between knots, extended linearly past the last one.
    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let k = &self.knots;
        let i = match k.iter().position(|p| p.0 >= r) {
            Some(0) => 1,
            Some(i) => i,
            None => k.len() - 1,
        };
        let (a, b) = (k[i - 1], k[i]);
        if r == b.0 {
            return b.1;
        }
        a.1 + (b.1 - a.1) * (r - a.0) / (b.0 - a.0)
    }

    /// `α⁻¹(y)` by bisection on the sampled range.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let max = self.max_value();
        if !(y >= 0.0) || y > max {
            return Err(Error::OutOfRange { value: y, max });
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0, self.max_radius());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }
}

/// `β(r, s)` on a grid: nondecreasing in `r`, nonincreasing in `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonKL {
    pub radii: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[i][j] = β(radii[i], times[j])`.
    pub values: Vec<Vec<f64>>,
}

impl ComparisonKL {
    /// Bilinear interpolation, with `β(0, ·) = 0`, constant continuation
    /// beyond the last time and proportional continuation beyond the last
    /// radius.
    pub fn eval(&self, r: f64, s: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let col = |row: &[f64]| -> f64 {
            let t = &self.times;
            if s <= t[0] {
                return row[0];
            }
            match t.iter().position(|v| *v >= s) {
                None => *row.last().unwrap(),
                Some(j) => {
                    let w = (s - t[j - 1]) / (t[j] - t[j - 1]);
                    row[j - 1] + w * (row[j] - row[j - 1])
                }
            }
        };
        let rs = &self.radii;
        match rs.iter().position(|v| *v >= r) {
            Some(0) => col(&self.values[0]) * r / rs[0],
            Some(i) => {
                let w = (r - rs[i - 1]) / (rs[i] - rs[i - 1]);
                let a = col(&self.values[i - 1]);
                a + w * (col(&self.values[i]) - a)
            }
            // proportional continuation keeps both monotonicities
            None => {
                let i = rs.len() - 1;
                col(&self.values[i]) * r / rs[i]
            }
        }
    }
}

/// Exponential envelope `d(t) ≤ K·d₀·e^(−λ(t−t₀))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFit {
    pub k: f64,
    pub lambda: f64,
    /// Smallest relative slack `(bound − d) / bound` over the samples.
    pub residual: f64,
}

/// One simulated trajectory reduced to distances from the equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySample {
    pub x0: Vec<f64>,
    pub t0: f64,
    pub d0: f64,
    /// Elapsed times `t − t₀`.
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
}

impl TrajectorySample {
    pub fn sup_distance(&self) -> f64 {
        self.distances.iter().copied().fold(self.d0, f64::max)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Ensemble {
    pub samples: Vec<TrajectorySample>,
}

/// Class-K envelope of `sup_t d` against `d₀`.
pub fn fit_class_k(ens: &Ensemble) -> Result<ComparisonK> {
    let pts: Vec<(f64, f64)> = ens.samples.iter().map(|s| (s.d0, s.sup_distance())).collect();
    ComparisonK::upper_envelope(&pts)
}

/// Class-KL envelope over the shared time grid of the ensemble. Refused
/// unless every row decays and the largest-radius row at least halves.
pub fn fit_class_kl(ens: &Ensemble) -> Result<ComparisonKL> {
    let first = ens
        .samples
        .first()
        .ok_or_else(|| Error::FitRefused("empty ensemble".into()))?;
    let times = first.times.clone();
    if times.is_empty() || ens.samples.iter().any(|s| s.times != times) {
        return Err(Error::Precondition("class-KL fit needs a shared time grid".into()));
    }
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut sorted: Vec<&TrajectorySample> = ens.samples.iter().filter(|s| s.d0 > 0.0).collect();
    sorted.sort_by(|a, b| a.d0.total_cmp(&b.d0));
    for s in sorted {
        if s.distances.iter().any(|d| !d.is_finite()) {
            return Err(Error::FitRefused(format!("unbounded trajectory from d₀ = {}", s.d0)));
        }
        // suffix maximum makes each row nonincreasing in s
        let mut row = s.distances.clone();
        row[0] = row[0].max(s.d0);
        for j in (0..row.len() - 1).rev() {
            row[j] = row[j].max(row[j + 1]);
        }
        match rows.last_mut() {
            Some((r, prev)) if *r == s.d0 => {
                for (p, v) in prev.iter_mut().zip(row) {
                    *p = p.max(v);
                }
            }
            _ => rows.push((s.d0, row)),
        }
    }
    if rows.is_empty() {
        return Err(Error::FitRefused("no sample with positive radius".into()));
    }
    let radii: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut values = vec![vec![0.0; times.len()]; rows.len()];
    for j in 0..times.len() {
        let col: Vec<f64> = rows.iter().map(|r| r.1[j]).collect();
        for (i, v) in monotone_majorant(&radii, &col).into_iter().enumerate() {
            values[i][j] = v;
        }
    }
    for (r, row) in radii.iter().zip(&values) {
        if !(row.last().unwrap() < &row[0]) {
            return Err(Error::FitRefused(format!("no decay at radius {r}")));
        }
    }
    let top = values.last().unwrap();
    if *top.last().unwrap() > 0.5 * top[0] {
        return Err(Error::FitRefused(format!(
            "envelope at the largest radius only decays from {} to {}",
            top[0],
            top.last().unwrap()
        )));
    }
    Ok(ComparisonKL { radii, times, values })
}

/// Tolerated growth `ln(1 + κ)` of the fitted constant above its `λ = 0` value.
pub const EXP_FIT_KAPPA: f64 = 0.005;
pub const EXP_FIT_K_MAX: f64 = 1e3;
pub const EXP_FIT_MIN_RATE: f64 = 1e-4;

/// Largest rate `λ` whose envelope constant `K(λ) = max e^{λs}·d/d₀` stays
/// within a factor `1 + κ` of `K(0)` (and below `K_max`). Rates that could be
/// produced by the `κ` slack alone over the observed span are refused.
pub fn fit_exponential(ens: &Ensemble) -> Result<ExpFit> {
    let mut pts = Vec::new();
    let mut span = 0.0f64;
    for s in &ens.samples {
        if !(s.d0 > 0.0) {
            continue;
        }
        for (t, d) in s.times.iter().zip(&s.distances) {
            if !d.is_finite() {
                return Err(Error::FitRefused(format!("unbounded trajectory from d₀ = {}", s.d0)));
            }
            if *d > 0.0 {
                pts.push((*t, (d / s.d0).ln()));
                span = span.max(*t);
            }
        }
    }
    if pts.is_empty() || span <= 0.0 {
        return Err(Error::FitRefused("no samples with elapsed time".into()));
    }
    let ln_k = |lambda: f64| {
        pts.iter()
            .map(|(s, l)| l + lambda * s)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let ln_slack = EXP_FIT_KAPPA.ln_1p();
    let target = (ln_k(0.0) + ln_slack).min(EXP_FIT_K_MAX.ln());
    if ln_k(0.0) > target {
        return Err(Error::FitRefused("transient amplification exceeds K_max".into()));
    }
    let mut hi = 1.0;
    while ln_k(hi) <= target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::FitRefused("rate unbounded by the samples".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ln_k(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let floor = EXP_FIT_MIN_RATE.max(2.0 * ln_slack / span);
    if lo <= floor {
        return Err(Error::FitRefused(format!(
            "no exponential rate above {floor:.3e} is supported (best {lo:.3e})"
        )));
    }
    let k = ln_k(lo).exp() * (1.0 + 1e-12);
    let mut residual = f64::INFINITY;
    for s in &ens.samples {
        for (t, d) in s.times.iter().zip(&s.distances) {
            let bound = k * s.d0 * (-lo * t).exp();
            if bound > 0.0 {
                residual = residual.min((bound - d) / bound);
            }
        }
    }
    Ok(ExpFit {
        k,
        lambda: lo,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Stable,
    AsymptoticallyStable,
    ExponentiallyStable,
    RefutedUnstable,
    Inconclusive,
}

/// A trajectory that left the `2r` ball (or the chart).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeWitness {
    pub x0: Vec<f64>,
    pub t0: f64,
    pub time: f64,
    /// Distance reached, or `None` when the trajectory left the chart.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifyOptions {
    /// Region radius `r`; initial distances lie in `[1e-4·r, r]`.
    pub region: f64,
    pub samples: usize,
    pub window: f64,
    /// Initial times; collapsed to the first entry for autonomous fields.
    pub t0_grid: Vec<f64>,
    pub steps: usize,
    /// Distances are evaluated at this many evenly spaced times (plus t₀).
    pub checkpoints: usize,
    pub seed: u64,
    /// If given, `region` must not exceed `0.8 ·` this value.
    pub injectivity_radius: Option<f64>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            region: 1.0,
            samples: 32,
            window: 10.0,
            t0_grid: vec![0.0, 1.0, 10.0],
            steps: 512,
            checkpoints: 40,
            seed: 42,
            injectivity_radius: None,
        }
    }
}

pub const MIN_SAMPLES: usize = 8;
pub const ASYMPTOTIC_RATIO: f64 = 1e-3;
pub const ESCAPE_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub classification: Classification,
    pub region_radius: f64,
    pub trajectories: usize,
    pub t0_grid: Vec<f64>,
    pub seed: u64,
    pub class_k: Option<ComparisonK>,
    pub class_kl: Option<ComparisonKL>,
    pub exp_fit: Option<ExpFit>,
    pub escape: Option<EscapeWitness>,
    /// Largest `d(t_f) / d₀` over the ensemble.
    pub max_final_ratio: f64,
    /// Largest `sup_t d / d₀` over the ensemble.
    pub max_excursion_ratio: f64,
    pub reason: Option<String>,
}

impl StabilityVerdict {
    fn bare(opts: &ClassifyOptions, t0_grid: Vec<f64>, classification: Classification) -> Self {
        Self {
            classification,
            region_radius: opts.region,
            trajectories: 0,
            t0_grid,
            seed: opts.seed,
            class_k: None,
            class_kl: None,
            exp_fit: None,
            escape: None,
            max_final_ratio: f64::NAN,
            max_excursion_ratio: f64::NAN,
            reason: None,
        }
    }
}

enum Run {
    Done(TrajectorySample),
    Escaped(EscapeWitness),
    Failed(String),
}

fn simulate(
    solver: &GeodesicSolver<'_>,
    f: &dyn VectorField,
    xbar: &ChartPoint,
    x0: &ChartPoint,
    t0: f64,
    opts: &ClassifyOptions,
) -> Result<Run> {
    let m = solver.manifold();
    let domain = m.domain();
    let inside = |x: &[f64]| domain.contains(x);
    let traj = match rk4_flow(f, x0.as_slice(), t0, t0 + opts.window, opts.steps, &inside) {
        Ok(t) => t,
        Err(Error::PathExit { exit }) => {
            return Ok(Run::Escaped(EscapeWitness {
                x0: x0.as_slice().to_vec(),
                t0,
                time: exit,
                distance: None,
            }))
        }
        Err(e) => return Err(e),
    };
    let g = m.metric_at(xbar.as_slice());
    let stride = (opts.steps / opts.checkpoints.max(1)).max(1);
    let mut idx: Vec<usize> = (0..=opts.steps).step_by(stride).collect();
    if *idx.last().unwrap() != opts.steps {
        idx.push(opts.steps);
    }
    let mut warm: Option<LogWarmStart> = None;
    let mut times = Vec::with_capacity(idx.len());
    let mut distances = Vec::with_capacity(idx.len());
    for i in idx {
        let p = ChartPoint::new(traj.points[i].clone());
        let (l, w) = match solver.log_warm(xbar, &p, warm.as_ref()) {
            Ok(r) => r,
            Err(e) => return Ok(Run::Failed(format!("distance at t = {}: {e}", traj.times[i]))),
        };
        warm = Some(w);
        let d = quadratic_norm(&g, &l.vector.components);
        times.push(traj.times[i] - t0);
        distances.push(d);
        if d > ESCAPE_FACTOR * opts.region {
            return Ok(Run::Escaped(EscapeWitness {
                x0: x0.as_slice().to_vec(),
                t0,
                time: traj.times[i],
                distance: Some(d),
            }));
        }
    }
    Ok(Run::Done(TrajectorySample {
        x0: x0.as_slice().to_vec(),
        t0,
        d0: distances[0],
        times,
        distances,
    }))
}

/// Simulates the ensemble and classifies the equilibrium. Returns the
/// verdict and the (possibly partial) ensemble.
pub fn classify_with_ensemble(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    xbar: &ChartPoint,
    opts: &ClassifyOptions,
) -> Result<(StabilityVerdict, Ensemble)> {
    m.check_point(xbar.as_slice())?;
    if opts.samples < MIN_SAMPLES {
        return Err(Error::Precondition(format!(
            "classification needs at least {MIN_SAMPLES} samples, got {}",
            opts.samples
        )));
    }
    if !(opts.region > 0.0) || !(opts.window > 0.0) || opts.t0_grid.is_empty() {
        return Err(Error::Precondition(
            "region radius, window and t₀ grid must be nonempty".into(),
        ));
    }
    if let Some(inj) = opts.injectivity_radius {
        if opts.region > 0.8 * inj {
            return Err(Error::Precondition(format!(
                "region radius {} exceeds 0.8 × injectivity estimate {inj}",
                opts.region
            )));
        }
    }
    let g = m.metric_at(xbar.as_slice());
    let t0_grid = if f.is_autonomous() {
        vec![opts.t0_grid[0]]
    } else {
        opts.t0_grid.clone()
    };
    for t0 in &t0_grid {
        let fx = eval_field(f, xbar.as_slice(), *t0)?;
        let norm = quadratic_norm(&g, &fx);
        if norm > 1e-8 {
            return Err(Error::Precondition(format!(
                "x̄ is not an equilibrium: ‖f(x̄, {t0})‖_g = {norm:e}"
            )));
        }
    }

    let solver = GeodesicSolver::new(m);
    let mut rng = sampling::rng(opts.seed);
    let mut starts = Vec::with_capacity(opts.samples);
    for i in 0..opts.samples {
        let d0 = if i == 0 {
            opts.region
        } else {
            sampling::log_uniform(&mut rng, 1e-4 * opts.region, opts.region)
        };
        let u = sampling::g_unit_direction(&mut rng, &g);
        starts.push(solver.exp(xbar, (u * d0).as_slice())?);
    }

    let mut ens = Ensemble::default();
    let mut verdict = StabilityVerdict::bare(opts, t0_grid.clone(), Classification::Inconclusive);
    for t0 in &t0_grid {
        for x0 in &starts {
            match simulate(&solver, f, xbar, x0, *t0, opts)? {
                Run::Done(s) => ens.samples.push(s),
                Run::Escaped(w) => {
                    verdict.classification = Classification::RefutedUnstable;
                    verdict.trajectories = ens.samples.len() + 1;
                    verdict.reason = Some("a trajectory left the 2r ball".into());
                    verdict.escape = Some(w);
                    return Ok((verdict, ens));
                }
                Run::Failed(why) => {
                    verdict.trajectories = ens.samples.len();
                    verdict.reason = Some(why);
                    return Ok((verdict, ens));
                }
            }
        }
    }
    verdict.trajectories = ens.samples.len();
    let ratio = |s: &TrajectorySample, d: f64| if s.d0 > 0.0 { d / s.d0 } else { 0.0 };
    verdict.max_final_ratio = ens
        .samples
        .iter()
        .map(|s| ratio(s, *s.distances.last().unwrap()))
        .fold(0.0, f64::max);
    verdict.max_excursion_ratio = ens
        .samples
        .iter()
        .map(|s| ratio(s, s.sup_distance()))
        .fold(0.0, f64::max);

    match fit_class_k(&ens) {
        Ok(alpha) => verdict.class_k = Some(alpha),
        Err(e) => {
            verdict.reason = Some(e.to_string());
            return Ok((verdict, ens));
        }
    }
    let asymptotic = ens
        .samples
        .iter()
        .all(|s| *s.distances.last().unwrap() <= ASYMPTOTIC_RATIO * s.d0);
    if asymptotic {
        verdict.classification = Classification::AsymptoticallyStable;
        match fit_class_kl(&ens) {
            Ok(beta) => verdict.class_kl = Some(beta),
            Err(e) => {
                verdict.classification = Classification::Inconclusive;
                verdict.reason = Some(e.to_string());
                return Ok((verdict, ens));
            }
        }
        match fit_exponential(&ens) {
            Ok(fit) => {
                verdict.classification = Classification::ExponentiallyStable;
                verdict.exp_fit = Some(fit);
            }
            Err(e) => verdict.reason = Some(format!("not exponential: {e}")),
        }
    } else {
        verdict.classification = Classification::Stable;
        verdict.reason = Some(format!(
            "final distance ratio {:.3e} exceeds {ASYMPTOTIC_RATIO:e}",
            verdict.max_final_ratio
        ));
    }
    Ok((verdict, ens))
}

/// Classifies an equilibrium from a sampled ensemble of trajectories.
pub fn classify(
    m: &ManifoldDescriptor,
    f: &dyn VectorField,
    xbar: &ChartPoint,
    opts: &ClassifyOptions,
) -> Result<StabilityVerdict> {
    classify_with_ensemble(m, f, xbar, opts).map(|(v, _)| v)
}
