//! End-to-end acceptance suite. Runs without the libtest harness so that the
//! one-line verdict of every criterion is always printed; the process fails
//! if any criterion fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use riemstab_core::flows::{integrate_flow, lift_dynamics, lift_roundtrip_check, ExprField, VectorField};
use riemstab_core::geodesics::GeodesicSolver;
use riemstab_core::lyapunov::{
    construct_converse_on, lie_derivative, verify_triple_exponential, ConverseOptions, LyapunovCandidate, ScalarField,
    VerifyOptions,
};
use riemstab_core::perturbation::{
    admissible_delta, exp_bound_constants, ultimate_bound, verify_exp_bound, EnsembleSpec, PerturbedSystem,
};
use riemstab_core::zoo::{self, ZooParams};
use riemstab_core::{sampling, ChartPoint, Error, ManifoldDescriptor, Params};

type Outcome = Result<String, String>;
/// Name, time budget in seconds, check.
type Criterion = (&'static str, Option<u64>, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn euclid(n: usize) -> ManifoldDescriptor {
    zoo::manifold(
        "euclidean",
        &ZooParams {
            dim: Some(n),
            ..Default::default()
        },
    )
    .unwrap()
}

fn sphere() -> ManifoldDescriptor {
    zoo::manifold("sphere2", &ZooParams::default()).unwrap()
}

fn field(src: &[&str]) -> Arc<dyn VectorField> {
    Arc::new(ExprField::new(src, &Params::new()).unwrap())
}

fn origin(n: usize) -> ChartPoint {
    ChartPoint::new(DVector::zeros(n))
}

/// Great-circle angle between two points given in (polar, azimuth).
fn great_circle(x: &[f64], y: &[f64]) -> f64 {
    let e = |p: &[f64]| DVector::from_vec(vec![p[0].sin() * p[1].cos(), p[0].sin() * p[1].sin(), p[0].cos()]);
    let (a, b) = (e(x), e(y));
    let cross = nalgebra::Vector3::new(a[0], a[1], a[2]).cross(&nalgebra::Vector3::new(b[0], b[1], b[2]));
    cross.norm().atan2(a.dot(&b))
}

fn geometry_oracles() -> Outcome {
    let mut rng = sampling::rng(2024);

    let m = euclid(3);
    let solver = GeodesicSolver::new(&m);
    let mut worst_e = 0.0f64;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let exact = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let d = solver
            .distance(&ChartPoint::from_slice(&x), &ChartPoint::from_slice(&y))
            .map_err(err)?;
        worst_e = worst_e.max((d - exact).abs());
    }

    let s = sphere();
    let solver = GeodesicSolver::new(&s);
    let mut worst_s = 0.0f64;
    for _ in 0..500 {
        let x = [rng.random_range(0.4..PI - 0.4), rng.random_range(-2.0..2.0)];
        // stay inside the chart's injectivity ball, bounded by the poles
        let reach = 0.8 * x[0].min(PI - x[0]);
        let u = sampling::g_unit_direction(&mut rng, &s.metric_at(&x));
        let y = solver
            .exp(
                &ChartPoint::from_slice(&x),
                (u * rng.random_range(0.01..reach)).as_slice(),
            )
            .map_err(err)?;
        let d = solver.distance(&ChartPoint::from_slice(&x), &y).map_err(err)?;
        worst_s = worst_s.max((d - great_circle(&x, y.as_slice())).abs());
    }

    let mut worst_r = 0.0f64;
    for _ in 0..10 {
        let x = ChartPoint::from_slice(&[rng.random_range(0.5..PI - 0.5), rng.random_range(-2.0..2.0)]);
        let radius = solver.injectivity_estimate(&x).map_err(err)?.radius;
        let g = s.metric_at(x.as_slice());
        for _ in 0..50 {
            let u = sampling::g_unit_direction(&mut rng, &g);
            let v = u * rng.random_range(0.01..0.8 * radius);
            let y = solver.exp(&x, v.as_slice()).map_err(err)?;
            let back = solver.log(&x, &y).map_err(err)?;
            let diff = &back.vector.components - &v;
            worst_r = worst_r.max((diff.transpose() * &g * &diff)[(0, 0)].sqrt());
        }
    }
    check(
        worst_e <= 1e-9 && worst_s <= 1e-6 && worst_r <= 1e-6,
        format!("euclidean max err {worst_e:.1e} (1000 pairs), great-circle max err {worst_s:.1e} (500 pairs), exp/log round trip max err {worst_r:.1e} (500 samples)"),
    )
}

fn punctured_circle() -> Outcome {
    let m = zoo::manifold("circle", &ZooParams::default()).unwrap();
    let solver = GeodesicSolver::new(&m);
    let mut ok = true;
    let mut parts = Vec::new();
    let mut prev = 0.0;
    for eta in [0.1, 0.01, 0.001] {
        let d = solver
            .distance(
                &ChartPoint::from_slice(&[eta]),
                &ChartPoint::from_slice(&[2.0 * PI - eta]),
            )
            .map_err(err)?;
        ok &= (d - (2.0 * PI - 2.0 * eta)).abs() <= 1e-6 && d > prev;
        prev = d;
        parts.push(format!("η={eta}: d={d:.9}"));
    }
    ok &= (2.0 * PI - prev).abs() < 0.0021;
    check(ok, format!("{} → 2π = {:.9}", parts.join(", "), 2.0 * PI))
}

fn normal_coordinate_metric() -> Outcome {
    let m = sphere();
    let solver = GeodesicSolver::new(&m);
    let xbar = ChartPoint::from_slice(&[FRAC_PI_2, 0.3]);
    let dir = [0.6, 0.8];
    let mut pts = Vec::new();
    for r in [0.2, 0.1, 0.05, 0.025] {
        let z = [r * dir[0], r * dir[1]];
        let j = solver.exp_jacobian(&xbar, &z).map_err(err)?;
        let x = solver.exp(&xbar, &z).map_err(err)?;
        let pulled = j.transpose() * m.metric_at(x.as_slice()) * &j;
        let dev = (pulled - DMatrix::<f64>::identity(2, 2)).abs().max();
        pts.push((r.ln(), dev.ln()));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let slope = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / pts.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>();
    check(slope >= 1.8, format!("log-log slope {slope:.3} (need ≥ 1.8)"))
}

fn lift_conjugacy() -> Outcome {
    let sys = zoo::system("sphere2", "gradient-to-pole").map_err(err)?;
    let m = sphere();
    let lifted = lift_dynamics(&m, field(sys.field), &ChartPoint::from_slice(sys.equilibrium)).map_err(err)?;
    let z0 = [0.18, -0.24];
    let window = (0.0, 2.0);
    let at_default = lift_roundtrip_check(&lifted, &z0, window, riemstab_cli::config::DEFAULT_STEPS).map_err(err)?;
    let coarse = lift_roundtrip_check(&lifted, &z0, window, 8).map_err(err)?;
    let fine = lift_roundtrip_check(&lifted, &z0, window, 16).map_err(err)?;
    let order = (coarse.max_deviation / fine.max_deviation).log2();
    check(
        at_default.max_deviation <= 1e-5 && order >= 3.5,
        format!(
            "deviation {:.1e} at {} steps (need ≤ 1e-5), observed order {order:.2} (need ≥ 3.5)",
            at_default.max_deviation, at_default.steps
        ),
    )
}

fn converse_oracle() -> Outcome {
    let m = euclid(2);
    let lifted = Arc::new(lift_dynamics(&m, field(&["-x1", "-x2"]), &origin(2)).map_err(err)?);
    let cand = construct_converse_on(lifted, 1.0, ConverseOptions::default()).map_err(err)?;
    // ∫₀¹ ‖e^(−τ) z‖² dτ = ‖z‖² (1 − e⁻²)/2
    let c = (1.0 - (-2.0f64).exp()) / 2.0;
    let mut coef_err = 0.0f64;
    for z in [[0.3, 0.1], [-0.2, 0.4], [0.05, -0.05]] {
        let v = cand.value(&z, 0.0).map_err(err)?;
        coef_err = coef_err.max((v / (z[0] * z[0] + z[1] * z[1]) - c).abs());
    }
    let est = verify_triple_exponential(
        &m,
        field(&["-x1", "-x2"]).as_ref(),
        &origin(2),
        &cand,
        &VerifyOptions {
            region: 0.5,
            samples: 32,
            ..Default::default()
        },
    )
    .map_err(err)?;
    let l = est.lambdas.ok_or("no λ's: verification failed")?;
    let expect = [c, c, 2.0 * c, 2.0 * c];
    let lam_err = l.iter().zip(expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        est.passed && coef_err <= 1e-6 && lam_err <= 1e-6,
        format!(
            "coefficient err {coef_err:.1e} vs (1−e⁻²)/2 = {c:.9}, λ = [{:.9}, {:.9}, {:.9}, {:.9}], max λ err {lam_err:.1e}",
            l[0], l[1], l[2], l[3]
        ),
    )
}

fn closed_form_triple() -> Outcome {
    let m = euclid(2);
    let w = LyapunovCandidate::from_expression("x1^2 + x2^2", 2, &Params::new()).map_err(err)?;
    let est = verify_triple_exponential(
        &m,
        field(&["-x1", "-x2"]).as_ref(),
        &origin(2),
        &w,
        &VerifyOptions::default(),
    )
    .map_err(err)?;
    let l = est.lambdas.ok_or("no λ's: verification failed")?;
    let c = exp_bound_constants(&est).map_err(err)?;
    let lam_err = l
        .iter()
        .zip([1.0, 1.0, 2.0, 2.0])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let const_err = [c.k, c.gamma, c.zeta]
        .iter()
        .map(|v| (v - 1.0).abs())
        .fold(0.0, f64::max);
    check(
        est.passed && lam_err <= 1e-6 && const_err <= 1e-6,
        format!(
            "λ = [{:.9}, {:.9}, {:.9}, {:.9}], (k, γ, ζ) = ({:.9}, {:.9}, {:.9})",
            l[0], l[1], l[2], l[3], c.k, c.gamma, c.zeta
        ),
    )
}

fn perturbation_suite() -> Outcome {
    // 1-D: ẋ = −x + 0.05 with v = x²
    let m = euclid(1);
    let f = field(&["-x1"]);
    let h = field(&["0.05"]);
    let w = LyapunovCandidate::from_expression("x1^2", 1, &Params::new()).map_err(err)?;
    let est = verify_triple_exponential(&m, f.as_ref(), &origin(1), &w, &VerifyOptions::default()).map_err(err)?;
    let consts = exp_bound_constants(&est).map_err(err)?;
    let sys = PerturbedSystem::new(f.clone(), h.clone(), 0.05).map_err(err)?;
    let settled = integrate_flow(&m, &sys.combined(), &ChartPoint::from_slice(&[0.4]), 0.0, 30.0, 512)
        .map_err(err)?
        .endpoint()[0];
    let spec = EnsembleSpec {
        samples: 32,
        horizon: 20.0,
        ..Default::default()
    };
    let rep1 = verify_exp_bound(&m, &sys, &origin(1), &consts, &spec).map_err(err)?;
    let zd = consts.zeta * 0.05;
    let one_d = rep1.passed && (settled - 0.05).abs() <= 1e-6 && (zd - 0.05).abs() <= 1e-6;

    // sphere: gradient flow to the pole with a tangential disturbance of g-norm 0.02
    let reg = zoo::system("sphere2", "gradient-to-pole").map_err(err)?;
    let s = sphere();
    let xbar = ChartPoint::from_slice(reg.equilibrium);
    let fs = field(reg.field);
    let ws = LyapunovCandidate::from_expression("2*(1 - sin(x1)*cos(x2))", 2, &Params::new()).map_err(err)?;
    let est_s = verify_triple_exponential(
        &s,
        fs.as_ref(),
        &xbar,
        &ws,
        &VerifyOptions {
            region: reg.region,
            ..Default::default()
        },
    )
    .map_err(err)?;
    let cs = exp_bound_constants(&est_s).map_err(err)?;
    let hs = field(&["0.02*cos(t)", "0.02*sin(t)/sin(x1)"]);
    let sys_s = PerturbedSystem::new(fs.clone(), hs.clone(), 0.02).map_err(err)?;
    let spec_s = EnsembleSpec {
        samples: 64,
        initial_radius: reg.region,
        horizon: 10.0 / cs.gamma,
        ..Default::default()
    };
    let rep2 = verify_exp_bound(&s, &sys_s, &xbar, &cs, &spec_s).map_err(err)?;

    // δ-gating: anything above the admissible range is refused
    let admissible = cs.hypothesis_ratio * spec_s.initial_radius;
    let mut refused = 0;
    for scale in [1.0001, 1.5, 10.0] {
        let big = PerturbedSystem::new(fs.clone(), hs.clone(), admissible * scale).map_err(err)?;
        if matches!(
            verify_exp_bound(&s, &big, &xbar, &cs, &spec_s),
            Err(Error::DeltaTooLarge { .. })
        ) {
            refused += 1;
        }
    }
    let est_a = riemstab_core::lyapunov::verify_triple_asymptotic(
        &m,
        f.as_ref(),
        &origin(1),
        &w,
        &VerifyOptions {
            region: 1.0,
            ..Default::default()
        },
    )
    .map_err(err)?;
    let adm_u = admissible_delta(&est_a, 0.5, 0.5, 1.0).map_err(err)?;
    for scale in [1.0001, 2.0] {
        let big = PerturbedSystem::new(f.clone(), h.clone(), adm_u * scale).map_err(err)?;
        if matches!(
            ultimate_bound(&big, &est_a, 0.5, 0.5, 1.0),
            Err(Error::DeltaTooLarge { .. })
        ) {
            refused += 1;
        }
    }
    check(
        one_d && rep2.passed && rep2.worst_margin >= 0.0 && refused == 5,
        format!(
            "1-D settles to {settled:.9}, ζδ = {zd:.9}, margin {:.1e}; sphere: {} of {} checked over {} grid times, worst margin {:.2e}, passed {}; δ-gating refused {refused}/5",
            rep1.worst_margin, rep2.checked, rep2.trajectories, rep2.grid_times, rep2.worst_margin, rep2.passed
        ),
    )
}

fn lie_consistency() -> Outcome {
    let m = euclid(2);
    let mut rng = sampling::rng(8);
    let mut ratios = Vec::with_capacity(200);
    for _ in 0..200 {
        let mut c = || rng.random_range(-1.0..1.0f64);
        let fsrc = [
            format!("{:.3}*x1 + {:.3}*x2 + {:.3}*x2^2 + {:.3}*sin(t)", c(), c(), c(), c()),
            format!("{:.3}*x1 + {:.3}*x2 + {:.3}*sin(x1)", c(), c(), c()),
        ];
        let wsrc = format!(
            "{:.3}*x1^2 + {:.3}*x2^2 + {:.3}*x1*x2 + {:.3}*cos(x1 + x2) + {:.3}*t*x1",
            1.0 + c().abs(),
            1.0 + c().abs(),
            c(),
            c(),
            c()
        );
        let (x, t) = ([2.0 * c(), 2.0 * c()], c());
        let f = ExprField::new(&fsrc, &Params::new()).map_err(err)?;
        let w = LyapunovCandidate::from_expression(&wsrc, 2, &Params::new()).map_err(err)?;
        let exact = lie_derivative(&m, &f, &w, &ChartPoint::from_slice(&x), t).map_err(err)?;
        // central difference of w along the flow through (x, t)
        let along = |h: f64| -> Result<f64, String> {
            let p = ChartPoint::from_slice(&x);
            let fwd = integrate_flow(&m, &f, &p, t, t + h, 64).map_err(err)?;
            let bwd = integrate_flow(&m, &f, &p, t, t - h, 64).map_err(err)?;
            let a = w.value(fwd.endpoint().as_slice(), t + h).map_err(err)?;
            let b = w.value(bwd.endpoint().as_slice(), t - h).map_err(err)?;
            Ok((a - b) / (2.0 * h))
        };
        let h = 0.02;
        let ratio = (along(h)? - exact).abs() / (along(h / 2.0)? - exact).abs();
        ratios.push(ratio);
    }
    let inside = ratios.iter().filter(|r| (3.0..=5.0).contains(*r)).count();
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    check(
        inside == ratios.len(),
        format!("{inside}/{} ratios in [3, 5], range [{lo:.4}, {hi:.4}]", ratios.len()),
    )
}

fn configs() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut identical = 0;
    let mut total = 0;
    let mut differing = Vec::new();
    for cfg in configs() {
        let name = cfg.file_stem().unwrap().to_string_lossy().to_string();
        let mut reports = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{name}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_riemstab"))
                .args(["run", "--config"])
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .output()
                .map_err(err)?;
            if status.status.code() == Some(1) {
                return Err(format!("{name}: {}", String::from_utf8_lossy(&status.stderr)));
            }
            reports.push(std::fs::read(out.join("report.json")).map_err(err)?);
        }
        total += 1;
        if reports[0] == reports[1] {
            identical += 1;
        } else {
            differing.push(name);
        }
    }
    check(
        identical == total,
        format!("{identical}/{total} configurations byte-identical across two runs {differing:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("geometry oracles", Some(30), geometry_oracles),
        ("punctured-circle limit", Some(5), punctured_circle),
        ("normal-coordinate metric law", Some(10), normal_coordinate_metric),
        ("geodesic-lift conjugacy", Some(30), lift_conjugacy),
        ("converse-construction oracle", Some(10), converse_oracle),
        ("triple verification on closed forms", Some(10), closed_form_triple),
        ("perturbation bound suite", Some(60), perturbation_suite),
        ("Lie-derivative consistency", Some(10), lie_consistency),
        ("pipeline determinism", None, determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let over = budget.is_some_and(|b| elapsed > Duration::from_secs(b));
        let budget_note = budget.map(|b| format!(" / {b} s")).unwrap_or_default();
        let (ok, detail) = match result {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; over time budget")),
            Err(d) => (false, d),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "criterion {} [{}] {name}: {detail} ({:.2} s{budget_note})",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
