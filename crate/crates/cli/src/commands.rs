//! One handler per subcommand. Each returns a JSON document, an optional
//! CSV rendering and the outcome that decides the exit code.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};

use riemstab_core::flows::{integrate_flow, lift_roundtrip_check, LiftOptions, LiftedSystem};
use riemstab_core::geodesics::GeodesicSolver;
use riemstab_core::lyapunov::BoundMode;
use riemstab_core::perturbation::{
    exp_bound_constants, ultimate_bound, verify_exp_bound, verify_ultimate_bound, PerturbedSystem,
};
use riemstab_core::stability::Classification;
use riemstab_core::{riemannian_norm, ChartPoint, Error, TangentVec};

use crate::config::{AnalysisConfig, Model, PerturbationSpec, TripleMode};
use crate::error::CliError;
use crate::pipeline::{self, run_pipeline};
use crate::report::{trajectory_csv, Outcome, Stage, TrajectoryRecord};

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Geodesic,
    Exp,
    Log,
    Distance,
    Injectivity,
    Flow,
    LiftCheck,
    Classify,
    LyapunovConstruct,
    LyapunovVerify {
        candidate: Option<String>,
    },
    PerturbCheckH,
    PerturbUltimate {
        theta: Option<f64>,
        r1: Option<f64>,
        r2: Option<f64>,
    },
    PerturbExpBound,
    Run,
}

impl Command {
    /// Base name of the output files.
    pub fn name(&self) -> &'static str {
        match self {
            Command::Geodesic => "geodesic",
            Command::Exp => "exp",
            Command::Log => "log",
            Command::Distance => "distance",
            Command::Injectivity => "injectivity",
            Command::Flow => "flow",
            Command::LiftCheck => "lift-check",
            Command::Classify => "classify",
            Command::LyapunovConstruct => "lyapunov-construct",
            Command::LyapunovVerify { .. } => "lyapunov-verify",
            Command::PerturbCheckH => "perturb-check-h",
            Command::PerturbUltimate { .. } => "perturb-ultimate",
            Command::PerturbExpBound => "perturb-exp-bound",
            Command::Run => "report",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Output {
    pub json: Value,
    pub csv: Option<String>,
    pub outcome: Outcome,
}

impl Output {
    fn passed<T: Serialize>(value: &T) -> Result<Self, CliError> {
        Self::with(value, Outcome::Passed)
    }

    fn with<T: Serialize>(value: &T, outcome: Outcome) -> Result<Self, CliError> {
        Ok(Self {
            json: serde_json::to_value(value)?,
            csv: None,
            outcome,
        })
    }
}

fn point(cfg_value: &Option<Vec<f64>>, key: &str, fallback: Option<&[f64]>) -> Result<ChartPoint, CliError> {
    match (cfg_value, fallback) {
        (Some(v), _) => Ok(ChartPoint::from_slice(v)),
        (None, Some(f)) => Ok(ChartPoint::from_slice(f)),
        (None, None) => Err(CliError::Missing(key.into())),
    }
}

fn vector<'a>(cfg_value: &'a Option<Vec<f64>>, key: &str) -> Result<&'a [f64], CliError> {
    cfg_value.as_deref().ok_or_else(|| CliError::Missing(key.into()))
}

pub fn execute(cmd: &Command, cfg: &AnalysisConfig) -> Result<Output, CliError> {
    if *cmd == Command::Run {
        let report = run_pipeline(cfg)?;
        let mut csv = String::new();
        if report.trajectories.is_empty() {
            csv.push_str(&trajectory_csv(cfg.dim(), None));
        }
        for r in &report.trajectories {
            csv.push_str(&trajectory_csv(cfg.dim(), Some(r)));
        }
        return Ok(Output {
            json: serde_json::to_value(&report)?,
            csv: Some(csv),
            outcome: report.outcome,
        });
    }
    let model = cfg.build()?;
    let m = &model.manifold;
    let solver = GeodesicSolver::new(m);
    match cmd {
        Command::Geodesic => {
            let x = point(&cfg.x, "x", Some(&cfg.equilibrium))?;
            let v = vector(&cfg.v, "v")?;
            let path = solver.integrate(&x, v)?;
            let end = path.endpoint();
            let speed = riemannian_norm(m, &TangentVec::new(x.clone(), nalgebra::DVector::from_column_slice(v)))?;
            let mut csv = String::from("s");
            for i in 1..=m.dim() {
                let _ = write!(csv, ",x{i}");
            }
            for i in 1..=m.dim() {
                let _ = write!(csv, ",v{i}");
            }
            csv.push('\n');
            for s in &path.samples {
                let _ = write!(csv, "{}", s.s);
                for c in s.point.iter().chain(s.velocity.iter()) {
                    let _ = write!(csv, ",{c}");
                }
                csv.push('\n');
            }
            let mut out = Output::passed(&json!({
                "x": x.as_slice(),
                "v": v,
                "endpoint": end.as_slice(),
                "length": speed,
                "speed_drift": path.speed_drift(m),
                "samples": path.samples.len(),
            }))?;
            out.csv = Some(csv);
            Ok(out)
        }
        Command::Exp => {
            let x = point(&cfg.x, "x", Some(&cfg.equilibrium))?;
            let v = vector(&cfg.v, "v")?;
            let y = solver.exp(&x, v)?;
            Output::passed(&json!({ "x": x.as_slice(), "v": v, "exp": y.as_slice() }))
        }
        Command::Log => {
            let x = point(&cfg.x, "x", Some(&cfg.equilibrium))?;
            let y = point(&cfg.y, "y", None)?;
            let log = solver.log(&x, &y)?;
            Output::passed(&json!({
                "x": x.as_slice(),
                "y": y.as_slice(),
                "log": log.vector.components.as_slice(),
                "residual": log.residual,
                "iterations": log.iterations,
            }))
        }
        Command::Distance => {
            let x = point(&cfg.x, "x", Some(&cfg.equilibrium))?;
            let y = point(&cfg.y, "y", None)?;
            let d = solver.distance(&x, &y)?;
            Output::passed(&json!({ "x": x.as_slice(), "y": y.as_slice(), "distance": d }))
        }
        Command::Injectivity => {
            let x = point(&cfg.x, "x", Some(&cfg.equilibrium))?;
            let est = solver.injectivity_estimate(&x)?;
            Output::passed(&json!({
                "x": x.as_slice(),
                "estimate": est,
                "safety": cfg.safety,
                "usable_radius": cfg.safety * est.radius,
            }))
        }
        Command::Flow => {
            let x0 = point(&cfg.x0, "x0", None)?;
            let tf = cfg.tf.unwrap_or(cfg.t0 + cfg.window());
            let traj = integrate_flow(m, model.field.as_ref(), &x0, cfg.t0, tf, cfg.steps)?;
            let record = TrajectoryRecord::from_trajectory("flow", &traj);
            let mut out = Output::passed(&json!({
                "x0": x0.as_slice(),
                "t0": cfg.t0,
                "tf": tf,
                "steps": cfg.steps,
                "endpoint": traj.endpoint().as_slice(),
                "richardson_error": traj.richardson_error,
                "trajectory": record,
            }))?;
            out.csv = Some(trajectory_csv(m.dim(), Some(&record)));
            Ok(out)
        }
        Command::LiftCheck => lift_check(&model, cfg),
        Command::Classify => classify_cmd(&model, cfg),
        Command::LyapunovConstruct => lyapunov_construct(&model, cfg),
        Command::LyapunovVerify { candidate } => {
            let mut cfg = cfg.clone();
            if let Some(c) = candidate {
                cfg.lyapunov.candidate = Some(c.clone());
            }
            if cfg.lyapunov.candidate.is_none() {
                return Err(CliError::Missing("lyapunov.candidate".into()));
            }
            let (w, region) = pipeline::obtain_candidate(&cfg, &model, None, None)?;
            let est = pipeline::verify_candidate(&cfg, &model, &w, region, mode(cfg.lyapunov.mode))?;
            let outcome = if est.passed {
                Outcome::Passed
            } else {
                Outcome::VerificationFailed
            };
            Output::with(&est, outcome)
        }
        Command::PerturbCheckH => {
            let p = perturbation(cfg)?;
            let rep = pipeline::h_bound(&model, cfg, p, cfg.lyapunov.region.unwrap_or(cfg.region()))?;
            let outcome = match rep.holds {
                Some(false) => Outcome::HypothesisViolated,
                _ => Outcome::Passed,
            };
            Output::with(&rep, outcome)
        }
        Command::PerturbUltimate { theta, r1, r2 } => {
            let mut cfg = cfg.clone();
            let p = cfg
                .perturbation
                .as_mut()
                .ok_or_else(|| CliError::Missing("perturbation".into()))?;
            p.theta = theta.unwrap_or(p.theta);
            p.r1 = r1.or(p.r1);
            p.r2 = r2.or(p.r2);
            perturb_ultimate(&model, &cfg)
        }
        Command::PerturbExpBound => perturb_exp_bound(&model, cfg),
        Command::Run => unreachable!(),
    }
}

fn mode(m: TripleMode) -> BoundMode {
    match m {
        TripleMode::Asymptotic => BoundMode::Asymptotic,
        TripleMode::Exponential => BoundMode::Exponential,
    }
}

fn perturbation(cfg: &AnalysisConfig) -> Result<&PerturbationSpec, CliError> {
    cfg.perturbation
        .as_ref()
        .ok_or_else(|| CliError::Missing("perturbation".into()))
}

fn lifted(model: &Model, cfg: &AnalysisConfig) -> Result<(LiftedSystem, f64), CliError> {
    let inj = GeodesicSolver::new(&model.manifold).injectivity_estimate(&model.xbar)?;
    let opts = LiftOptions {
        safety: cfg.safety,
        ..Default::default()
    };
    let radius = cfg.safety * inj.radius;
    Ok((
        LiftedSystem::with_radius(&model.manifold, model.field.clone(), &model.xbar, radius, opts)?,
        inj.radius,
    ))
}

fn lift_check(model: &Model, cfg: &AnalysisConfig) -> Result<Output, CliError> {
    let eq = pipeline::equilibrium_stage(model, cfg);
    if !eq.passed() {
        return Output::with(&json!({ "equilibrium": eq }), Outcome::HypothesisViolated);
    }
    let (lifted, inj) = lifted(model, cfg)?;
    let z0 = match (&cfg.z0, &cfg.x0) {
        (Some(z), _) => z.clone(),
        (None, Some(x)) => lifted
            .to_tangent(&ChartPoint::from_slice(x), 1e-12, None)?
            .0
            .as_slice()
            .to_vec(),
        (None, None) => return Err(CliError::Missing("z0".into())),
    };
    let window = (cfg.t0, cfg.tf.unwrap_or(cfg.t0 + 1.0));
    let rep = lift_roundtrip_check(&lifted, &z0, window, cfg.steps)?;
    let outcome = if rep.max_deviation <= pipeline::LIFT_TOLERANCE {
        Outcome::Passed
    } else {
        Outcome::VerificationFailed
    };
    Output::with(
        &json!({
            "injectivity_radius": inj,
            "valid_radius": lifted.valid_radius(),
            "z0": z0,
            "window": window,
            "tolerance": pipeline::LIFT_TOLERANCE,
            "roundtrip": rep,
        }),
        outcome,
    )
}

/// Verdict summary plus the full verdict.
#[derive(Debug, Serialize)]
#[allow(non_snake_case)]
struct ClassifyOutput<'a> {
    classification: Classification,
    K: Option<f64>,
    lambda: Option<f64>,
    alpha_knots: Option<&'a [(f64, f64)]>,
    beta_grid: Option<&'a riemstab_core::ComparisonKL>,
    seed: u64,
    margins: Value,
    refutation: Option<TrajectoryRecord>,
    stage: &'a Stage<pipeline::ClassificationStage>,
}

fn classify_cmd(model: &Model, cfg: &AnalysisConfig) -> Result<Output, CliError> {
    let inj = GeodesicSolver::new(&model.manifold).injectivity_estimate(&model.xbar)?;
    let (stage, refutation) = pipeline::classification_stage(model, cfg, Some(cfg.safety * inj.radius));
    let v = match &stage {
        Stage::Passed { result } | Stage::Failed { result, .. } => &result.verdict,
        Stage::Error { message } => {
            return Err(CliError::Invalid {
                key: "classify".into(),
                message: message.clone(),
            })
        }
        Stage::Skipped { .. } => unreachable!(),
    };
    let out = ClassifyOutput {
        classification: v.classification,
        K: v.exp_fit.map(|f| f.k),
        lambda: v.exp_fit.map(|f| f.lambda),
        alpha_knots: v.class_k.as_ref().map(|k| k.knots()),
        beta_grid: v.class_kl.as_ref(),
        seed: v.seed,
        margins: json!({
            "max_final_ratio": v.max_final_ratio,
            "max_excursion_ratio": v.max_excursion_ratio,
            "exp_fit_residual": v.exp_fit.map(|f| f.residual),
        }),
        refutation: refutation.clone(),
        stage: &stage,
    };
    let mut output = Output::with(&out, stage.outcome().unwrap_or(Outcome::Passed))?;
    output.csv = Some(trajectory_csv(model.manifold.dim(), refutation.as_ref()));
    Ok(output)
}

fn lyapunov_construct(model: &Model, cfg: &AnalysisConfig) -> Result<Output, CliError> {
    let mut cfg = cfg.clone();
    cfg.lyapunov.candidate = None;
    let inj = GeodesicSolver::new(&model.manifold).injectivity_estimate(&model.xbar)?;
    let usable = cfg.safety * inj.radius;
    let (lift, lifted) = pipeline::lift_stage(model, &cfg, usable);
    let (cls, _) = pipeline::classification_stage(model, &cfg, Some(usable));
    let verdict = match cls.result() {
        Some(r) if cls.passed() => &r.verdict,
        _ => return Output::with(&json!({ "classification": cls }), Outcome::VerificationFailed),
    };
    let (stage, _) = pipeline::lyapunov_stage(model, &cfg, verdict, lifted.as_ref());
    let outcome = stage.outcome().unwrap_or(Outcome::Error);
    Output::with(&json!({ "lift": lift, "lyapunov": stage }), outcome)
}

/// Candidate and verified triple for the perturbation commands.
fn triple(
    model: &Model,
    cfg: &AnalysisConfig,
    mode: BoundMode,
) -> Result<riemstab_core::lyapunov::BoundEstimates, CliError> {
    let (w, region) = if cfg.lyapunov.candidate.is_some() {
        pipeline::obtain_candidate(cfg, model, None, None)?
    } else {
        let (lifted, inj) = lifted(model, cfg)?;
        let (cls, _) = pipeline::classification_stage(model, cfg, Some(cfg.safety * inj));
        let verdict = cls
            .result()
            .filter(|_| cls.passed())
            .map(|r| r.verdict.clone())
            .ok_or_else(|| Error::Precondition("classification did not establish stability".into()))?;
        pipeline::obtain_candidate(cfg, model, Some(&verdict), Some(&std::sync::Arc::new(lifted)))?
    };
    let est = pipeline::verify_candidate(cfg, model, &w, region, mode)?;
    Ok(est)
}

fn perturb_ultimate(model: &Model, cfg: &AnalysisConfig) -> Result<Output, CliError> {
    let p = perturbation(cfg)?;
    let est = triple(model, cfg, BoundMode::Asymptotic)?;
    if !est.passed {
        return Output::with(&json!({ "estimates": est }), Outcome::VerificationFailed);
    }
    let h_rep = pipeline::h_bound(model, cfg, p, est.region_radius)?;
    let delta = p.delta.unwrap_or(h_rep.sup);
    if h_rep.holds == Some(false) {
        return Output::with(
            &json!({ "estimates": est, "h_bound": h_rep }),
            Outcome::HypothesisViolated,
        );
    }
    let sys = PerturbedSystem::new(model.field.clone(), model.perturbation.clone().unwrap(), delta)?;
    let r2 = p.r2.unwrap_or(est.region_radius);
    let r1 = p.r1.unwrap_or(0.5 * r2);
    let bound = match ultimate_bound(&sys, &est, p.theta, r1, r2) {
        Ok(b) => b,
        Err(e @ Error::DeltaTooLarge { .. }) => {
            return Output::with(
                &json!({ "estimates": est, "h_bound": h_rep, "refused": e.to_string() }),
                Outcome::HypothesisViolated,
            )
        }
        Err(e) => return Err(e.into()),
    };
    let spec = pipeline::ensemble_spec(cfg, p, r2, 10.0);
    let rep = verify_ultimate_bound(&model.manifold, &sys, &model.xbar, &bound, &spec)?;
    let outcome = if rep.passed {
        Outcome::Passed
    } else {
        Outcome::VerificationFailed
    };
    Output::with(
        &json!({ "estimates": est, "h_bound": h_rep, "bound": bound, "check": rep }),
        outcome,
    )
}

fn perturb_exp_bound(model: &Model, cfg: &AnalysisConfig) -> Result<Output, CliError> {
    let p = perturbation(cfg)?;
    let est = triple(model, cfg, BoundMode::Exponential)?;
    if !est.passed {
        return Output::with(&json!({ "estimates": est }), Outcome::VerificationFailed);
    }
    let consts = exp_bound_constants(&est)?;
    let h_rep = pipeline::h_bound(model, cfg, p, est.region_radius)?;
    let delta = p.delta.unwrap_or(h_rep.sup);
    if h_rep.holds == Some(false) {
        return Output::with(
            &json!({ "estimates": est, "constants": consts, "h_bound": h_rep }),
            Outcome::HypothesisViolated,
        );
    }
    let sys = PerturbedSystem::new(model.field.clone(), model.perturbation.clone().unwrap(), delta)?;
    let spec = pipeline::ensemble_spec(cfg, p, est.region_radius, 10.0 / consts.gamma);
    match verify_exp_bound(&model.manifold, &sys, &model.xbar, &consts, &spec) {
        Ok(rep) => {
            let outcome = if rep.passed {
                Outcome::Passed
            } else {
                Outcome::VerificationFailed
            };
            Output::with(&json!({ "estimates": est, "h_bound": h_rep, "check": rep }), outcome)
        }
        Err(e @ Error::DeltaTooLarge { .. }) => Output::with(
            &json!({ "estimates": est, "constants": consts, "h_bound": h_rep, "refused": e.to_string() }),
            Outcome::HypothesisViolated,
        ),
        Err(e) => Err(e.into()),
    }
}
