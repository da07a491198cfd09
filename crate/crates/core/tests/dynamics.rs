use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use riemstab_core::flows::{lift_dynamics, lift_roundtrip_check, ExprField, VectorField};
use riemstab_core::lyapunov::{
    apply_bump, converse_field, lie_derivative, verify_triple_asymptotic, verify_triple_exponential, BumpFunction,
    CandidateKind, ConverseOptions, LyapunovCandidate, ScalarField, VerifyOptions,
};
use riemstab_core::perturbation::{
    exp_bound_constants, ultimate_bound, verify_exp_bound, verify_ultimate_bound, EnsembleSpec, PerturbedSystem,
};
use riemstab_core::stability::{classify, classify_with_ensemble, fit_class_k, Classification, ClassifyOptions};
use riemstab_core::zoo::{self, ZooParams};
use riemstab_core::{ChartDomain, ChartPoint, Error, ManifoldDescriptor, Params};

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

fn field(src: &[&str]) -> Arc<dyn VectorField> {
    Arc::new(ExprField::new(src, &Params::new()).unwrap())
}

fn origin(n: usize) -> ChartPoint {
    ChartPoint::new(nalgebra::DVector::zeros(n))
}

#[test]
fn registry_systems_get_their_documented_verdicts() {
    for s in zoo::SYSTEMS {
        if s.manifold == "sphere2" || s.manifold == "poincare-disk" {
            continue; // exercised by the acceptance suite
        }
        let m = zoo::manifold(s.manifold, &s.manifold_params()).unwrap();
        let f = ExprField::new(s.field, &Params::new()).unwrap();
        let opts = ClassifyOptions {
            region: s.region,
            window: s.window,
            ..Default::default()
        };
        let v = classify(&m, &f, &ChartPoint::from_slice(s.equilibrium), &opts).unwrap();
        let expected = match s.expected {
            zoo::ExpectedBehavior::Stable => Classification::Stable,
            zoo::ExpectedBehavior::AsymptoticallyStable => Classification::AsymptoticallyStable,
            zoo::ExpectedBehavior::ExponentiallyStable => Classification::ExponentiallyStable,
            zoo::ExpectedBehavior::Unstable => Classification::RefutedUnstable,
        };
        assert_eq!(v.classification, expected, "{}/{}: {:?}", s.manifold, s.name, v.reason);
    }
}

#[test]
fn linear_decay_fit_and_refuted_growth() {
    let m = euclid(2);
    let v = classify(
        &m,
        field(&["-x1", "-x2"]).as_ref(),
        &origin(2),
        &ClassifyOptions::default(),
    )
    .unwrap();
    let fit = v.exp_fit.unwrap();
    assert!(fit.k <= 1.01 && fit.lambda >= 0.99, "{fit:?}");

    let v = classify(
        &m,
        field(&["x1", "x2"]).as_ref(),
        &origin(2),
        &ClassifyOptions::default(),
    )
    .unwrap();
    assert_eq!(v.classification, Classification::RefutedUnstable);
    assert!(v.escape.is_some());

    let few = ClassifyOptions {
        samples: 4,
        ..Default::default()
    };
    assert!(matches!(
        classify(&m, field(&["-x1", "-x2"]).as_ref(), &origin(2), &few),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn spiral_overshoot_matches_brute_force() {
    // the rotation part is skew, so the Euclidean norm decays monotonically
    // and the best constant is 1; the brute-force maximum of |x(t)|/|x0|
    // over directions is the oracle
    let m = euclid(2);
    let opts = ClassifyOptions {
        window: 80.0,
        ..Default::default()
    };
    let v = classify(&m, field(&["-0.1*x1 + x2", "-x1 - 0.1*x2"]).as_ref(), &origin(2), &opts).unwrap();
    let fit = v.exp_fit.unwrap();
    let brute = (0..64)
        .map(|i| {
            let th = i as f64 * std::f64::consts::TAU / 64.0;
            (0..=800)
                .map(|k| {
                    let t = k as f64 * 0.1;
                    // closed-form solution e^{-0.1 t} R(-t) x0 for unit x0
                    let (c, s) = (t.cos(), t.sin());
                    let (x, y) = (c * th.cos() + s * th.sin(), -s * th.cos() + c * th.sin());
                    (-0.1 * t).exp() * (x * x + y * y).sqrt() * (0.1 * t).exp()
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    assert!((fit.k - brute).abs() <= 0.05 * brute, "{} vs {brute}", fit.k);
    assert!((fit.lambda - 0.1).abs() < 0.005);
}

#[test]
fn classification_is_reproducible_and_scales_with_the_metric() {
    let m = euclid(2);
    let f = field(&["-x1 + x2^2", "-2*x2"]);
    let opts = ClassifyOptions {
        region: 0.5,
        ..Default::default()
    };
    let a = classify(&m, f.as_ref(), &origin(2), &opts).unwrap();
    let b = classify(&m, f.as_ref(), &origin(2), &opts).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));

    // g = c²·I: every distance scales by c, the rate does not change
    let c = 3.0;
    let scaled = ManifoldDescriptor::from_expressions(
        "scaled",
        &[vec!["9", "0"], vec!["0", "9"]],
        ChartDomain::cube(2, -10.0, 10.0),
        &Params::new(),
    )
    .unwrap();
    let lin = field(&["-x1", "-0.5*x2"]);
    let opts = ClassifyOptions { window: 20.0, ..opts };
    let (va, ea) = classify_with_ensemble(&m, lin.as_ref(), &origin(2), &opts).unwrap();
    let scaled_opts = ClassifyOptions {
        region: c * opts.region,
        ..opts.clone()
    };
    let (vb, eb) = classify_with_ensemble(&scaled, lin.as_ref(), &origin(2), &scaled_opts).unwrap();
    for (sa, sb) in ea.samples.iter().zip(&eb.samples) {
        for (da, db) in sa.distances.iter().zip(&sb.distances) {
            assert!((c * da - db).abs() <= 1e-9 * db.max(1e-12));
        }
    }
    let (la, lb) = (va.exp_fit.unwrap().lambda, vb.exp_fit.unwrap().lambda);
    assert!((la - lb).abs() < 1e-9);
    let alpha = fit_class_k(&ea).unwrap();
    for s in &ea.samples {
        assert!(s.sup_distance() <= alpha.eval(s.d0));
    }
}

#[test]
fn converse_candidate_satisfies_the_flow_identity() {
    let m = euclid(2);
    let f = field(&["-x1 + 0.5*x2", "-x2 - x1^2"]);
    let lifted = Arc::new(lift_dynamics(&m, f.clone(), &origin(2)).unwrap());
    let conv = Arc::new(converse_field(lifted, 1.5, ConverseOptions::default()).unwrap());
    let cand = LyapunovCandidate::new(conv.clone(), CandidateKind::Converse);
    for x in [[0.2, -0.1], [-0.3, 0.25], [0.05, 0.4]] {
        let p = ChartPoint::from_slice(&x);
        let lie = lie_derivative(&m, f.as_ref(), &cand, &p, 0.0).unwrap();
        let identity = conv.lie_identity(&x, 0.0).unwrap();
        assert!((lie - identity).abs() < 1e-6, "{lie} vs {identity}");
        assert!(cand.value(&x, 0.0).unwrap() > 0.0);
    }
    assert_eq!(cand.value(&[0.0, 0.0], 0.0).unwrap(), 0.0);
}

#[test]
fn bump_leaves_the_inner_ball_untouched() {
    let m = euclid(2);
    let f = field(&["-x1", "-x2 + x1*x2"]);
    let raw = LyapunovCandidate::from_expression("x1^2 + 2*x2^2", 2, &Params::new()).unwrap();
    let bump = BumpFunction::new(0.4, 0.8).unwrap();
    let w = apply_bump(&m, &origin(2), &raw, bump).unwrap();
    for x in [[0.1, 0.1], [-0.2, 0.3], [0.0, -0.35]] {
        let p = ChartPoint::from_slice(&x);
        assert_eq!(w.value(&x, 0.0).unwrap(), raw.value(&x, 0.0).unwrap());
        let a = lie_derivative(&m, f.as_ref(), &w, &p, 0.0).unwrap();
        let b = lie_derivative(&m, f.as_ref(), &raw, &p, 0.0).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
    assert_eq!(w.value(&[0.9, 0.0], 0.0).unwrap(), 0.0);
    let mid = w.value(&[0.6, 0.0], 0.0).unwrap();
    assert!(mid > 0.0 && mid < 0.36);
    let opts = VerifyOptions {
        region: 0.6,
        ..Default::default()
    };
    assert!(matches!(
        verify_triple_exponential(&m, f.as_ref(), &origin(2), &w, &opts),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn forced_linear_system_stays_within_the_ultimate_bound() {
    let m = euclid(2);
    let f = field(&["-x1", "-x2"]);
    let h = field(&["0.05*sin(t)", "0.05*cos(t)"]);
    let w = LyapunovCandidate::from_expression("x1^2 + x2^2", 2, &Params::new()).unwrap();
    let est = verify_triple_asymptotic(
        &m,
        f.as_ref(),
        &origin(2),
        &w,
        &VerifyOptions {
            region: 1.0,
            samples: 64,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(est.passed);
    let sys = PerturbedSystem::new(f.clone(), h.clone(), 0.05).unwrap();
    let bound = ultimate_bound(&sys, &est, 0.5, 0.5, 1.0).unwrap();
    // steady response amplitude of ẋ = −x + h is 0.05/√2 per component, 0.05 in norm
    assert!(bound.rho >= 0.05);
    let rep = verify_ultimate_bound(
        &m,
        &sys,
        &origin(2),
        &bound,
        &EnsembleSpec {
            samples: 16,
            initial_radius: bound.initial_radius,
            horizon: 20.0,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(rep.passed, "{rep:?}");

    let mut prev = 0.0;
    for delta in [0.0, 0.01, 0.05, 0.1, 0.3, 0.6, 0.9] {
        let sys = PerturbedSystem::new(f.clone(), h.clone(), delta).unwrap();
        let rho = ultimate_bound(&sys, &est, 0.5, 0.5, 1.0).unwrap().rho;
        assert!(rho >= prev);
        prev = rho;
    }
    let big = PerturbedSystem::new(f.clone(), h, 5.0).unwrap();
    assert!(matches!(
        ultimate_bound(&big, &est, 0.5, 0.5, 1.0),
        Err(Error::DeltaTooLarge { .. })
    ));
}

#[test]
fn unperturbed_exp_bound_tracks_the_fitted_rate() {
    let m = euclid(2);
    let f = field(&["-x1", "-x2"]);
    let w = LyapunovCandidate::from_expression("x1^2 + x2^2", 2, &Params::new()).unwrap();
    let est = verify_triple_exponential(&m, f.as_ref(), &origin(2), &w, &VerifyOptions::default()).unwrap();
    let consts = exp_bound_constants(&est).unwrap();
    let verdict = classify(&m, f.as_ref(), &origin(2), &ClassifyOptions::default()).unwrap();
    let fit = verdict.exp_fit.unwrap();
    assert!((consts.gamma - fit.lambda).abs() <= 0.1 * fit.lambda);
    assert!((consts.k - fit.k).abs() <= 0.1 * fit.k);
    let sys = PerturbedSystem::new(f, field(&["0", "0"]), 0.0).unwrap();
    let rep = verify_exp_bound(
        &m,
        &sys,
        &origin(2),
        &consts,
        &EnsembleSpec {
            samples: 16,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(rep.passed && rep.excluded.is_empty());
    assert!(rep.worst_margin <= 1e-6 + 1e-9);

    // δ beyond ratio·initial radius leaves no admissible initial point
    let sys = PerturbedSystem::new(field(&["-x1", "-x2"]), field(&["0.9", "0"]), 0.9).unwrap();
    let spec = EnsembleSpec {
        samples: 8,
        initial_radius: 0.5,
        ..Default::default()
    };
    assert!(matches!(
        verify_exp_bound(&m, &sys, &origin(2), &consts, &spec),
        Err(Error::DeltaTooLarge { .. })
    ));
}

#[test]
fn sphere_gradient_flow_lifts_conjugately() {
    let m = zoo::manifold("sphere2", &ZooParams::default()).unwrap();
    let f = field(&["cos(x1)*cos(x2)", "-sin(x2)/sin(x1)"]);
    let lifted = lift_dynamics(&m, f, &ChartPoint::from_slice(&[FRAC_PI_2, 0.0])).unwrap();
    let coarse = lift_roundtrip_check(&lifted, &[0.18, -0.24], (0.0, 2.0), 8).unwrap();
    let fine = lift_roundtrip_check(&lifted, &[0.18, -0.24], (0.0, 2.0), 16).unwrap();
    let order = (coarse.max_deviation / fine.max_deviation).log2();
    assert!(order >= 3.5, "order {order}");
}
