//! The analysis pipeline: equilibrium check → injectivity estimate → lift →
//! classification → Lyapunov construction/verification → perturbation
//! bounds. A stage whose prerequisites failed is recorded as skipped with
//! the reason; errors are recorded and the pipeline continues where the
//! remaining stages still make sense.

use std::sync::Arc;

use serde::Serialize;

use riemstab_core::flows::{
    check_equilibrium, field_jacobian_bound, integrate_flow, lift_roundtrip_check, EquilibriumReport, LiftOptions,
    LiftRoundtripReport, LiftedSystem, EQUILIBRIUM_TOLERANCE,
};
use riemstab_core::geodesics::{GeodesicSolver, InjectivityEstimate};
use riemstab_core::lyapunov::{
    apply_bump, chart_scaling_constants, construct_converse_on, default_horizon, verify_triple_asymptotic,
    verify_triple_exponential, BoundEstimates, BoundMode, BumpFunction, CandidateMeta, ConverseOptions,
    LyapunovCandidate, ScalingConstants, VerifyOptions,
};
use riemstab_core::perturbation::{
    check_h_bound, exp_bound_constants, ultimate_bound, verify_exp_bound, verify_ultimate_bound, EnsembleSpec,
    ExpBoundConstants, ExpBoundReport, HBoundReport, PerturbedSystem, UltimateBound, UltimateBoundReport,
};
use riemstab_core::stability::{classify, Classification, ClassifyOptions, StabilityVerdict};
use riemstab_core::{sampling, ChartDomain, ChartPoint, Error};

use crate::config::{AnalysisConfig, Model, PerturbationSpec};
use crate::error::CliError;
use crate::report::{Outcome, Report, Stage, TrajectoryRecord};

/// Largest tolerated geodesic-lift round-trip deviation.
pub const LIFT_TOLERANCE: f64 = 1e-5;
/// RK4 steps of the pipeline's lift round-trip check over its unit window.
pub const LIFT_CHECK_STEPS: usize = 64;
/// Samples of the `‖T_x f‖` boundedness check.
pub const JACOBIAN_SAMPLES: usize = 32;
/// Samples of the norm-comparison constants.
pub const SCALING_SAMPLES: usize = 64;
/// Distance evaluations per ensemble trajectory.
pub const ENSEMBLE_CHECKPOINTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stages {
    pub equilibrium: Stage<EquilibriumStage>,
    pub injectivity: Stage<InjectivityStage>,
    pub lift: Stage<LiftStage>,
    pub classification: Stage<ClassificationStage>,
    pub lyapunov: Stage<LyapunovStage>,
    pub perturbation: Stage<PerturbationStage>,
}

impl Stages {
    /// First non-passing outcome in stage order.
    pub fn outcome(&self) -> Outcome {
        [
            self.equilibrium.outcome(),
            self.injectivity.outcome(),
            self.lift.outcome(),
            self.classification.outcome(),
            self.lyapunov.outcome(),
            self.perturbation.outcome(),
        ]
        .into_iter()
        .flatten()
        .find(|o| *o != Outcome::Passed)
        .unwrap_or(Outcome::Passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumStage {
    pub window: (f64, f64),
    pub check: EquilibriumReport,
    /// Sampled supremum of `‖T_x f(·, t)‖` over the region and window.
    pub jacobian_bound: f64,
    pub jacobian_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectivityStage {
    pub estimate: InjectivityEstimate,
    pub safety: f64,
    /// `safety · radius`: the largest radius used downstream.
    pub usable_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftStage {
    pub valid_radius: f64,
    pub z0: Vec<f64>,
    pub window: (f64, f64),
    pub tolerance: f64,
    pub roundtrip: LiftRoundtripReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationStage {
    /// Verdicts are local to the chart region; no global claim is made.
    pub scope: &'static str,
    pub window: f64,
    pub steps: usize,
    pub verdict: StabilityVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovStage {
    pub candidate: CandidateMeta,
    pub estimates: BoundEstimates,
    pub exp_constants: Option<ExpBoundConstants>,
    /// Norm-comparison constants on the chart box around `x̄`.
    pub scaling: Option<ScalingConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationStage {
    pub h_bound: HBoundReport,
    /// `δ` used by the bounds: the configured value or the sampled supremum.
    pub delta: f64,
    pub exp_bound: Option<ExpBoundReport>,
    pub ultimate: Option<UltimateBound>,
    pub ultimate_check: Option<UltimateBoundReport>,
}

fn failed<T>(outcome: Outcome, reason: impl Into<String>, result: T) -> Stage<T> {
    Stage::Failed {
        outcome,
        reason: reason.into(),
        result,
    }
}

pub fn equilibrium_stage(model: &Model, cfg: &AnalysisConfig) -> Stage<EquilibriumStage> {
    let window = (cfg.t0, cfg.t0 + cfg.window());
    let check = match check_equilibrium(
        &model.manifold,
        model.field.as_ref(),
        &model.xbar,
        window,
        EQUILIBRIUM_TOLERANCE,
    ) {
        Ok(c) => c,
        Err(e) => return Stage::error(e),
    };
    let jacobian_bound = match field_jacobian_bound(
        &model.manifold,
        model.field.as_ref(),
        &model.xbar,
        cfg.region(),
        window,
        JACOBIAN_SAMPLES,
        cfg.seed,
    ) {
        Ok(b) => b,
        Err(e) => return Stage::error(e),
    };
    let holds = check.holds && jacobian_bound.is_finite();
    let result = EquilibriumStage {
        window,
        check,
        jacobian_bound,
        jacobian_samples: JACOBIAN_SAMPLES,
    };
    if holds {
        Stage::Passed { result }
    } else {
        let reason = if result.check.holds {
            "‖T_x f‖ is unbounded on the region".to_string()
        } else {
            format!(
                "x̄ is not an equilibrium: ‖f(x̄, t)‖_g up to {:e}, drift {:e} (tolerance {:e})",
                result.check.max_field_norm, result.check.max_drift, result.check.tolerance
            )
        };
        failed(Outcome::HypothesisViolated, reason, result)
    }
}

pub fn injectivity_stage(model: &Model, cfg: &AnalysisConfig) -> Stage<InjectivityStage> {
    match GeodesicSolver::new(&model.manifold).injectivity_estimate(&model.xbar) {
        Ok(estimate) => Stage::Passed {
            result: InjectivityStage {
                estimate,
                safety: cfg.safety,
                usable_radius: cfg.safety * estimate.radius,
            },
        },
        Err(e) => Stage::error(e),
    }
}

/// Builds the lift on the usable radius and checks the conjugacy on one
/// seeded initial point over a unit window.
pub fn lift_stage(
    model: &Model,
    cfg: &AnalysisConfig,
    usable_radius: f64,
) -> (Stage<LiftStage>, Option<Arc<LiftedSystem>>) {
    let opts = LiftOptions {
        safety: cfg.safety,
        ..Default::default()
    };
    let lifted = match LiftedSystem::with_radius(&model.manifold, model.field.clone(), &model.xbar, usable_radius, opts)
    {
        Ok(l) => Arc::new(l),
        Err(e) => return (Stage::error(e), None),
    };
    let z0: Vec<f64> = match &cfg.z0 {
        Some(z) => z.clone(),
        None => {
            let mut rng = sampling::rng(cfg.seed);
            let u = sampling::g_unit_direction(&mut rng, lifted.base_metric());
            (u * 0.5 * cfg.region().min(usable_radius)).as_slice().to_vec()
        }
    };
    let window = (cfg.t0, cfg.t0 + 1.0);
    let stage = match lift_roundtrip_check(&lifted, &z0, window, cfg.steps.min(LIFT_CHECK_STEPS)) {
        Ok(roundtrip) => {
            let result = LiftStage {
                valid_radius: usable_radius,
                z0,
                window,
                tolerance: LIFT_TOLERANCE,
                roundtrip,
            };
            if result.roundtrip.max_deviation <= LIFT_TOLERANCE {
                Stage::Passed { result }
            } else {
                let reason = format!(
                    "lift round-trip deviation {:e} exceeds {:e}",
                    result.roundtrip.max_deviation, LIFT_TOLERANCE
                );
                failed(Outcome::VerificationFailed, reason, result)
            }
        }
        Err(e) => Stage::error(e),
    };
    (stage, Some(lifted))
}

pub fn classify_options(cfg: &AnalysisConfig, usable_radius: Option<f64>) -> ClassifyOptions {
    let region = match usable_radius {
        Some(r) => cfg.region().min(r),
        None => cfg.region(),
    };
    ClassifyOptions {
        region,
        samples: cfg.samples,
        window: cfg.window(),
        steps: cfg.steps,
        seed: cfg.seed,
        t0_grid: vec![cfg.t0, cfg.t0 + 1.0, cfg.t0 + 10.0],
        ..Default::default()
    }
}

/// Classification plus, on refutation, the escaping trajectory.
pub fn classification_stage(
    model: &Model,
    cfg: &AnalysisConfig,
    usable_radius: Option<f64>,
) -> (Stage<ClassificationStage>, Option<TrajectoryRecord>) {
    let opts = classify_options(cfg, usable_radius);
    let verdict = match classify(&model.manifold, model.field.as_ref(), &model.xbar, &opts) {
        Ok(v) => v,
        Err(e) => return (Stage::error(e), None),
    };
    let witness = verdict.escape.as_ref().and_then(|w| {
        let x0 = ChartPoint::from_slice(&w.x0);
        // the witness may have left the chart: shorten until it integrates
        [1.0, 0.99, 0.9, 0.5].iter().find_map(|frac| {
            let tf = w.t0 + frac * w.time.max(cfg.window() / cfg.steps as f64);
            integrate_flow(&model.manifold, model.field.as_ref(), &x0, w.t0, tf, cfg.steps)
                .ok()
                .map(|traj| TrajectoryRecord::from_trajectory("refutation", &traj))
        })
    });
    let classification = verdict.classification;
    let result = ClassificationStage {
        scope: "chart-local",
        window: opts.window,
        steps: opts.steps,
        verdict,
    };
    let stage = match classification {
        Classification::RefutedUnstable => failed(
            Outcome::VerificationFailed,
            "a sampled trajectory escaped the region",
            result,
        ),
        Classification::Inconclusive => {
            let reason = result.verdict.reason.clone().unwrap_or_else(|| "inconclusive".into());
            failed(Outcome::VerificationFailed, reason, result)
        }
        _ => Stage::Passed { result },
    };
    (stage, witness)
}

/// Candidate to verify: the configured expression, or the bumped converse
/// candidate when an exponential fit is available.
pub fn obtain_candidate(
    cfg: &AnalysisConfig,
    model: &Model,
    verdict: Option<&StabilityVerdict>,
    lifted: Option<&Arc<LiftedSystem>>,
) -> Result<(LyapunovCandidate, f64), CliError> {
    let requested = cfg.lyapunov.region.unwrap_or(cfg.region());
    if let Some(src) = &cfg.lyapunov.candidate {
        let w = LyapunovCandidate::from_expression(src, model.manifold.dim(), &cfg.params)?;
        let region = match lifted {
            Some(l) => requested.min(l.valid_radius()),
            None => requested,
        };
        return Ok((w, region));
    }
    let fit = verdict.and_then(|v| v.exp_fit);
    let lifted = lifted.ok_or_else(|| Error::Precondition("converse construction needs the geodesic lift".into()))?;
    let horizon = match (cfg.lyapunov.horizon, fit) {
        (Some(h), _) => h,
        (None, Some(fit)) => default_horizon(&fit),
        (None, None) => {
            return Err(Error::Precondition(
                "converse construction needs an exponential fit or `lyapunov.horizon`; supply `lyapunov.candidate` otherwise"
                    .into(),
            )
            .into())
        }
    };
    let opts = ConverseOptions {
        steps: cfg.lyapunov.flow_steps,
        nodes: cfg.lyapunov.nodes,
        ..Default::default()
    };
    // the candidate only has to be smooth, so a coarser geodesic grid than
    // the lift check's is enough
    let cheap = LiftedSystem::with_radius(
        &model.manifold,
        model.field.clone(),
        &model.xbar,
        lifted.valid_radius(),
        LiftOptions {
            safety: cfg.safety,
            geodesic_steps: cfg.lyapunov.geodesic_steps,
            ..Default::default()
        },
    )?;
    let raw = construct_converse_on(Arc::new(cheap), horizon, opts)?;
    let outer = lifted.valid_radius();
    let bump = BumpFunction::new(0.5 * outer, outer)?;
    let w = apply_bump(&model.manifold, &model.xbar, &raw, bump)?;
    Ok((w, requested.min(bump.inner)))
}

pub fn verify_candidate(
    cfg: &AnalysisConfig,
    model: &Model,
    w: &LyapunovCandidate,
    region: f64,
    mode: BoundMode,
) -> Result<BoundEstimates, CliError> {
    let opts = VerifyOptions {
        region,
        samples: cfg.lyapunov.samples,
        t_grid: vec![cfg.t0, cfg.t0 + 1.0, cfg.t0 + 10.0],
        seed: cfg.seed,
    };
    Ok(match mode {
        BoundMode::Exponential => {
            verify_triple_exponential(&model.manifold, model.field.as_ref(), &model.xbar, w, &opts)?
        }
        BoundMode::Asymptotic => {
            verify_triple_asymptotic(&model.manifold, model.field.as_ref(), &model.xbar, w, &opts)?
        }
    })
}

/// Chart box of half-width `region` around `x̄`, clipped to the domain.
fn scaling_box(model: &Model, region: f64) -> Option<ChartDomain> {
    let d = model.manifold.domain();
    let x = model.xbar.as_slice();
    let lower = x
        .iter()
        .zip(&d.lower)
        .map(|(c, l)| (c - region).max(*l + 1e-9))
        .collect();
    let upper = x
        .iter()
        .zip(&d.upper)
        .map(|(c, u)| (c + region).min(*u - 1e-9))
        .collect();
    ChartDomain::new(lower, upper).ok()
}

pub fn lyapunov_stage(
    model: &Model,
    cfg: &AnalysisConfig,
    verdict: &StabilityVerdict,
    lifted: Option<&Arc<LiftedSystem>>,
) -> (Stage<LyapunovStage>, Option<BoundEstimates>) {
    let mode = match verdict.classification {
        Classification::ExponentiallyStable => BoundMode::Exponential,
        _ => BoundMode::Asymptotic,
    };
    if cfg.lyapunov.candidate.is_none() && verdict.exp_fit.is_none() && cfg.lyapunov.horizon.is_none() {
        return (
            Stage::skipped("no exponential fit for the converse construction and no `lyapunov.candidate` given"),
            None,
        );
    }
    let (w, region) = match obtain_candidate(cfg, model, Some(verdict), lifted) {
        Ok(c) => c,
        Err(e) => return (Stage::error(e), None),
    };
    let estimates = match verify_candidate(cfg, model, &w, region, mode) {
        Ok(e) => e,
        Err(e) => return (Stage::error(e), None),
    };
    let exp_constants = exp_bound_constants(&estimates).ok().filter(|_| estimates.passed);
    let scaling = scaling_box(model, region)
        .and_then(|b| chart_scaling_constants(&model.manifold, &b, SCALING_SAMPLES, cfg.seed).ok());
    let result = LyapunovStage {
        candidate: w.meta().clone(),
        estimates: estimates.clone(),
        exp_constants,
        scaling,
    };
    let stage = if estimates.passed {
        Stage::Passed { result }
    } else {
        let reason = estimates
            .reason
            .clone()
            .unwrap_or_else(|| "Lyapunov conditions violated".into());
        failed(Outcome::VerificationFailed, reason, result)
    };
    (stage, Some(estimates))
}

/// Ensemble for the perturbation checks.
pub fn ensemble_spec(cfg: &AnalysisConfig, p: &PerturbationSpec, initial_radius: f64, horizon: f64) -> EnsembleSpec {
    EnsembleSpec {
        samples: p.samples,
        initial_radius,
        t0: cfg.t0,
        horizon: p.horizon.unwrap_or(horizon),
        steps: cfg.steps,
        checkpoints: ENSEMBLE_CHECKPOINTS,
        seed: cfg.seed,
    }
}

pub fn h_bound(
    model: &Model,
    cfg: &AnalysisConfig,
    p: &PerturbationSpec,
    region: f64,
) -> Result<HBoundReport, CliError> {
    let h = model
        .perturbation
        .as_ref()
        .ok_or_else(|| CliError::Missing("perturbation.h".into()))?;
    Ok(check_h_bound(
        &model.manifold,
        h.as_ref(),
        &model.xbar,
        region,
        (cfg.t0, cfg.t0 + cfg.window()),
        p.h_samples,
        p.delta,
        cfg.seed,
    )?)
}

pub fn perturbation_stage(model: &Model, cfg: &AnalysisConfig, estimates: &BoundEstimates) -> Stage<PerturbationStage> {
    let Some(p) = &cfg.perturbation else {
        return Stage::skipped("no perturbation configured");
    };
    let region = estimates.region_radius;
    let h_report = match h_bound(model, cfg, p, region) {
        Ok(r) => r,
        Err(e) => return Stage::error(e),
    };
    let delta = p.delta.unwrap_or(h_report.sup);
    let mut result = PerturbationStage {
        h_bound: h_report,
        delta,
        exp_bound: None,
        ultimate: None,
        ultimate_check: None,
    };
    if result.h_bound.holds == Some(false) {
        let reason = format!("sampled ‖h‖_g reaches {:e} > δ = {delta:e}", result.h_bound.sup);
        return failed(Outcome::HypothesisViolated, reason, result);
    }
    let sys = match PerturbedSystem::new(model.field.clone(), model.perturbation.clone().unwrap(), delta) {
        Ok(s) => s,
        Err(e) => return Stage::error(e),
    };
    match estimates.mode {
        BoundMode::Exponential => {
            let consts = match exp_bound_constants(estimates) {
                Ok(c) => c,
                Err(e) => return Stage::error(e),
            };
            let spec = ensemble_spec(cfg, p, region, 10.0 / consts.gamma);
            match verify_exp_bound(&model.manifold, &sys, &model.xbar, &consts, &spec) {
                Ok(rep) => {
                    let passed = rep.passed;
                    result.exp_bound = Some(rep);
                    if passed {
                        Stage::Passed { result }
                    } else {
                        failed(Outcome::VerificationFailed, "exponential bound violated", result)
                    }
                }
                Err(e @ Error::DeltaTooLarge { .. }) => failed(Outcome::HypothesisViolated, e.to_string(), result),
                Err(e) => Stage::error(e),
            }
        }
        BoundMode::Asymptotic => {
            let r2 = p.r2.unwrap_or(region);
            let r1 = p.r1.unwrap_or(0.5 * r2);
            let bound = match ultimate_bound(&sys, estimates, p.theta, r1, r2) {
                Ok(b) => b,
                Err(e @ Error::DeltaTooLarge { .. }) => {
                    return failed(Outcome::HypothesisViolated, e.to_string(), result)
                }
                Err(e) => return Stage::error(e),
            };
            let spec = ensemble_spec(cfg, p, r2, 10.0);
            result.ultimate = Some(bound.clone());
            match verify_ultimate_bound(&model.manifold, &sys, &model.xbar, &bound, &spec) {
                Ok(rep) => {
                    let passed = rep.passed;
                    result.ultimate_check = Some(rep);
                    if passed {
                        Stage::Passed { result }
                    } else {
                        failed(Outcome::VerificationFailed, "ultimate bound violated", result)
                    }
                }
                Err(e) => Stage::error(e),
            }
        }
    }
}

pub fn run_pipeline(cfg: &AnalysisConfig) -> Result<Report, CliError> {
    let model = cfg.build()?;
    let mut trajectories = Vec::new();

    let equilibrium = equilibrium_stage(&model, cfg);
    let injectivity = if equilibrium.passed() {
        injectivity_stage(&model, cfg)
    } else {
        Stage::skipped("equilibrium hypothesis not established")
    };
    let usable = injectivity.result().map(|r| r.usable_radius);
    let (lift, lifted) = match usable {
        Some(r) => lift_stage(&model, cfg, r),
        None => (Stage::skipped("no injectivity estimate"), None),
    };
    let classification = if equilibrium.passed() {
        let (stage, witness) = classification_stage(&model, cfg, usable);
        trajectories.extend(witness);
        stage
    } else {
        Stage::skipped("equilibrium hypothesis not established")
    };
    let (lyapunov, estimates) = match (&classification, &lift) {
        (Stage::Passed { result }, _) => lyapunov_stage(&model, cfg, &result.verdict, lifted.as_ref()),
        (Stage::Failed { .. }, _) => (Stage::skipped("classification did not establish stability"), None),
        _ => (Stage::skipped("no classification"), None),
    };
    let perturbation = match (&lyapunov, &estimates) {
        _ if cfg.perturbation.is_none() => Stage::skipped("no perturbation configured"),
        (Stage::Passed { .. }, Some(est)) => perturbation_stage(&model, cfg, est),
        _ => Stage::skipped("no verified Lyapunov triple"),
    };
    let stages = Stages {
        equilibrium,
        injectivity,
        lift,
        classification,
        lyapunov,
        perturbation,
    };
    Ok(Report {
        tool: "riemstab",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg.clone(),
        outcome: stages.outcome(),
        stages,
        trajectories,
    })
}
