use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use riemstab_core::expr::{BinOp, Func};
use riemstab_core::flows::{integrate_flow, pushforward_fd, ExprField, VectorField};
use riemstab_core::geodesics::GeodesicSolver;
use riemstab_core::lyapunov::{
    apply_bump, lie_derivative, verify_triple_asymptotic, BoundEstimates, BumpFunction, LyapunovCandidate, ScalarField,
    VerifyOptions,
};
use riemstab_core::perturbation::{ultimate_bound, ExpBoundConstants, PerturbedSystem};
use riemstab_core::stability::{
    classify, fit_class_kl, fit_exponential, ClassifyOptions, ComparisonK, Ensemble, TrajectorySample,
};
use riemstab_core::zoo::{self, ZooParams};
use riemstab_core::{
    christoffel, eval_metric, riemannian_norm, ChartDomain, ChartPoint, CompiledExpr, Expr, ManifoldDescriptor, Params,
    TangentVec,
};

fn zoo_manifold(name: &str) -> ManifoldDescriptor {
    zoo::manifold(name, &ZooParams::default()).unwrap()
}

fn euclid2() -> ManifoldDescriptor {
    zoo_manifold("euclidean")
}

fn field(src: &[&str]) -> Arc<dyn VectorField> {
    Arc::new(ExprField::new(src, &Params::new()).unwrap())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

// ---------------------------------------------------------------- expressions

fn any_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u32..40).prop_map(|k| Expr::Num(k as f64 / 4.0)),
        (0usize..3).prop_map(Expr::Var),
        Just(Expr::Time),
        Just(Expr::Param("a".into())),
    ];
    leaf.prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (
                prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div),
                    Just(BinOp::Pow)
                ],
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
            (0usize..8, inner.clone()).prop_map(|(k, a)| Expr::Call(Func::ALL[k], vec![a])),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::Call(Func::Pow, vec![a, b])),
        ]
    })
}

/// Expressions built from everywhere-smooth operations only.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (1u32..12).prop_map(|k| Expr::Num(k as f64 / 4.0)),
        (0usize..3).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (
                prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul)],
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(op, a, b)| Expr::Binary(op, Box::new(a), Box::new(b))),
            (prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Tanh)], inner)
                .prop_map(|(f, a)| Expr::Call(f, vec![a])),
        ]
    })
}

proptest! {
    #[test]
    fn printing_then_parsing_is_the_identity(e in any_expr()) {
        let printed = e.to_string();
        let back = Expr::parse(&printed).unwrap();
        prop_assert_eq!(&back, &e, "printed as {}", printed);
        prop_assert_eq!(back.to_string(), printed);
    }

    #[test]
    fn dual_derivatives_match_central_differences(
        e in smooth_expr(),
        x in prop::collection::vec(-1.0f64..1.0, 3),
        k in 0usize..3,
    ) {
        let c = CompiledExpr::new(&e, 3, &Params::new()).unwrap();
        let (value, d) = c.eval_partial(&x, k, 0.0);
        prop_assert!(close(value, c.eval(&x, 0.0), 1e-15));
        let h = 1e-5;
        let mut p = x.clone();
        p[k] += h;
        let plus = c.eval(&p, 0.0);
        p[k] -= 2.0 * h;
        let minus = c.eval(&p, 0.0);
        let fd = (plus - minus) / (2.0 * h);
        prop_assert!(close(d, fd, 1e-5), "{} : dual {} vs fd {}", e, d, fd);
    }
}

// ------------------------------------------------------------------- metrics

fn sphere_point() -> impl Strategy<Value = [f64; 2]> {
    (0.3f64..PI - 0.3, -3.0f64..3.0).prop_map(|(a, b)| [a, b])
}

fn disk_point() -> impl Strategy<Value = [f64; 2]> {
    (-0.5f64..0.5, -0.5f64..0.5).prop_map(|(a, b)| [a, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_spd_and_christoffels_symmetric(s in sphere_point(), d in disk_point()) {
        for (m, x) in [(zoo_manifold("sphere2"), s), (zoo_manifold("poincare-disk"), d)] {
            let p = ChartPoint::from_slice(&x);
            let g = eval_metric(&m, &p).unwrap();
            prop_assert!((&g - g.transpose()).abs().max() <= 1e-14 * g.abs().max());
            prop_assert!(g.clone().cholesky().is_some());
            let gamma = christoffel(&m, &p).unwrap();
            prop_assert!(gamma.asymmetry() <= 1e-12 * (1.0 + gamma.max_abs()));
        }
    }

    #[test]
    fn constant_metrics_have_vanishing_christoffels(
        a in prop::collection::vec(-2.0f64..2.0, 4),
        x in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let a = DMatrix::from_row_slice(2, 2, &a);
        let g = &a * a.transpose() + DMatrix::identity(2, 2);
        let rows: Vec<Vec<String>> = (0..2).map(|i| (0..2).map(|j| format!("{:e}", g[(i, j)])).collect()).collect();
        let m = ManifoldDescriptor::from_expressions("const", &rows, ChartDomain::cube(2, -5.0, 5.0), &Params::new())
            .unwrap();
        prop_assert!(m.has_constant_metric());
        prop_assert_eq!(christoffel(&m, &ChartPoint::from_slice(&x)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn norms_are_homogeneous_and_subadditive(
        x in sphere_point(),
        u in prop::collection::vec(-2.0f64..2.0, 2),
        v in prop::collection::vec(-2.0f64..2.0, 2),
        c in -3.0f64..3.0,
    ) {
        let m = zoo_manifold("sphere2");
        let base = ChartPoint::from_slice(&x);
        let norm = |w: DVector<f64>| riemannian_norm(&m, &TangentVec::new(base.clone(), w)).unwrap();
        let (u, v) = (DVector::from_vec(u), DVector::from_vec(v));
        let nu = norm(u.clone());
        prop_assert!(close(norm(&u * c), c.abs() * nu, 1e-12));
        prop_assert!(norm(&u + &v) <= nu + norm(v.clone()) + 1e-12);
    }
}

// ----------------------------------------------------------------- geodesics

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn log_inverts_exp(x in sphere_point(), angle in 0.0f64..std::f64::consts::TAU, r in 0.01f64..0.8) {
        let x = [x[0].clamp(0.9, PI - 0.9), x[1]];
        let m = zoo_manifold("sphere2");
        let solver = GeodesicSolver::new(&m);
        let g = m.metric_at(&x);
        let v = [r * angle.cos() / g[(0, 0)].sqrt(), r * angle.sin() / g[(1, 1)].sqrt()];
        let p = ChartPoint::from_slice(&x);
        let y = solver.exp(&p, &v).unwrap();
        let back = solver.log(&p, &y).unwrap().vector.components;
        prop_assert!((back[0] - v[0]).abs() < 1e-7 && (back[1] - v[1]).abs() < 1e-7, "{:?} vs {:?}", back, v);
    }

    #[test]
    fn distance_is_symmetric_and_satisfies_the_triangle_inequality(
        a in disk_point(),
        b in disk_point(),
        c in disk_point(),
    ) {
        let m = zoo_manifold("poincare-disk");
        let solver = GeodesicSolver::new(&m);
        let (a, b, c) = (ChartPoint::from_slice(&a), ChartPoint::from_slice(&b), ChartPoint::from_slice(&c));
        let ab = solver.distance(&a, &b).unwrap();
        let ba = solver.distance(&b, &a).unwrap();
        let bc = solver.distance(&b, &c).unwrap();
        let ac = solver.distance(&a, &c).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8);
        prop_assert!(ac <= ab + bc + 1e-8);
    }
}

// --------------------------------------------------------------------- flows

fn forced() -> Arc<dyn VectorField> {
    field(&["-x1 + sin(t)*x2", "-0.5*x2 + 0.1*cos(t)"])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flows_compose(x in prop::collection::vec(-2.0f64..2.0, 2), t1 in 0.2f64..1.8, t0 in -1.0f64..1.0) {
        let m = euclid2();
        let f = forced();
        let x0 = ChartPoint::from_slice(&x);
        let direct = integrate_flow(&m, f.as_ref(), &x0, t0, t0 + 2.0, 512).unwrap();
        let mid = integrate_flow(&m, f.as_ref(), &x0, t0, t0 + t1, 512).unwrap();
        let mid = ChartPoint::new(mid.endpoint().clone());
        let composed = integrate_flow(&m, f.as_ref(), &mid, t0 + t1, t0 + 2.0, 512).unwrap();
        prop_assert!((direct.endpoint() - composed.endpoint()).norm() < 1e-8);
    }

    #[test]
    fn rk4_errors_shrink_at_fourth_order(q in 0.4f64..1.4, p in -0.5f64..0.5, tf in 2.0f64..4.0) {
        let m = euclid2();
        let f = field(&["x2", "-sin(x1)"]);
        let x0 = ChartPoint::from_slice(&[q, p]);
        let reference = integrate_flow(&m, f.as_ref(), &x0, 0.0, tf, 4096).unwrap();
        let err = |n| (integrate_flow(&m, f.as_ref(), &x0, 0.0, tf, n).unwrap().endpoint() - reference.endpoint()).norm();
        let ratio = err(20) / err(40);
        prop_assert!((8.0..=32.0).contains(&ratio), "ratio {}", ratio);
    }

    #[test]
    fn pushforwards_compose(x in prop::collection::vec(-1.0f64..1.0, 2)) {
        let inner = |p: &[f64]| Ok(DVector::from_vec(vec![p[0].sin() + p[1] * p[1], p[0] * p[1]]));
        let outer = |p: &[f64]| Ok(DVector::from_vec(vec![p[0].exp(), p[0] + p[1].powi(3)]));
        let y = inner(&x).unwrap();
        let chain = pushforward_fd(outer, y.as_slice(), None).unwrap() * pushforward_fd(inner, &x, None).unwrap();
        let whole = pushforward_fd(|p: &[f64]| outer(inner(p)?.as_slice()), &x, None).unwrap();
        prop_assert!((chain - whole).abs().max() < 1e-7);
    }
}

// ---------------------------------------------------------------- envelopes

fn synthetic_ensemble(rates: &[(f64, f64, f64)]) -> Ensemble {
    let times: Vec<f64> = (0..=40).map(|k| k as f64 * 0.25).collect();
    Ensemble {
        samples: rates
            .iter()
            .map(|&(d0, k, lam)| TrajectorySample {
                x0: vec![d0],
                t0: 0.0,
                d0,
                distances: times.iter().map(|s| d0 * k.min(1.0 + s) * (-lam * s).exp()).collect(),
                times: times.clone(),
            })
            .collect(),
    }
}

fn rates() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((0.01f64..1.0, 1.0f64..2.0, 0.5f64..2.0), 8..24)
}

proptest! {
    #[test]
    fn upper_envelopes_dominate_and_invert(pts in prop::collection::vec((1e-3f64..1.0, 0.0f64..2.0), 1..30)) {
        let k = ComparisonK::upper_envelope(&pts).unwrap();
        for &(r, v) in &pts {
            prop_assert!(k.eval(r) >= v);
        }
        let grid: Vec<f64> = (0..=50).map(|i| (i as f64 * k.max_radius() / 50.0).min(k.max_radius())).collect();
        for w in grid.windows(2) {
            prop_assert!(k.eval(w[1]) > k.eval(w[0]));
        }
        for &r in &grid {
            let y = k.eval(r);
            let back = k.inverse(y).unwrap();
            prop_assert!(back <= r * (1.0 + 1e-12) + 1e-300);
            prop_assert!((k.eval(back) - y).abs() <= 1e-12 * (1.0 + y));
        }
    }

    #[test]
    fn lower_envelopes_stay_below(pts in prop::collection::vec((1e-3f64..1.0, 1e-3f64..2.0), 1..30)) {
        let k = ComparisonK::lower_envelope(&pts).unwrap();
        for &(r, v) in &pts {
            prop_assert!(k.eval(r) <= v * (1.0 + 1e-12));
        }
    }

    #[test]
    fn kl_fits_dominate_and_decay(rates in rates()) {
        let ens = synthetic_ensemble(&rates);
        let kl = fit_class_kl(&ens).unwrap();
        for s in &ens.samples {
            for (t, d) in s.times.iter().zip(&s.distances) {
                prop_assert!(kl.eval(s.d0, *t) >= *d * (1.0 - 1e-12));
            }
        }
        for r in [0.05, 0.3, 0.9] {
            for w in s_grid().windows(2) {
                prop_assert!(kl.eval(r, w[1]) <= kl.eval(r, w[0]));
            }
            prop_assert!(kl.eval(r, 0.0) <= kl.eval(r + 0.05, 0.0));
        }
    }

    #[test]
    fn exponential_fits_dominate(rates in rates()) {
        let ens = synthetic_ensemble(&rates);
        let fit = fit_exponential(&ens).unwrap();
        for s in &ens.samples {
            for (t, d) in s.times.iter().zip(&s.distances) {
                prop_assert!(fit.k * (-fit.lambda * t).exp() * s.d0 >= *d * (1.0 - 1e-12));
            }
        }
    }
}

fn s_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 * 0.5).collect()
}

// ----------------------------------------------------------------- stability

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn classification_depends_only_on_the_seed(seed in any::<u64>()) {
        let m = euclid2();
        let f = field(&["-x1 + x2^2", "-x2"]);
        let opts = ClassifyOptions { seed, region: 0.5, ..Default::default() };
        let a = classify(&m, f.as_ref(), &ChartPoint::from_slice(&[0.0, 0.0]), &opts).unwrap();
        let b = classify(&m, f.as_ref(), &ChartPoint::from_slice(&[0.0, 0.0]), &opts).unwrap();
        prop_assert_eq!(format!("{:?}", a), format!("{:?}", b));
    }
}

// ---------------------------------------------------------------- lyapunov

proptest! {
    #[test]
    fn expression_gradients_match_central_differences(x in prop::collection::vec(-1.0f64..1.0, 2), t in 0.0f64..5.0) {
        let w = LyapunovCandidate::from_expression("x1^2*cos(x2) + exp(0.3*x1*x2) + 0.1*sin(t)*x2^2", 2, &Params::new())
            .unwrap();
        let grad = w.spatial_gradient(&x, t).unwrap();
        for k in 0..2 {
            let h = 1e-6;
            let mut p = x.clone();
            p[k] += h;
            let plus = w.value(&p, t).unwrap();
            p[k] -= 2.0 * h;
            let minus = w.value(&p, t).unwrap();
            prop_assert!(close(grad[k], (plus - minus) / (2.0 * h), 1e-7));
        }
    }

    #[test]
    fn bumps_do_not_change_the_inner_ball(r in 0.0f64..0.39, angle in 0.0f64..std::f64::consts::TAU, t in 0.0f64..3.0) {
        let m = euclid2();
        let f = field(&["-x1 + sin(t)*x2", "-x2"]);
        let raw = LyapunovCandidate::from_expression("x1^2 + 2*x2^2", 2, &Params::new()).unwrap();
        let xbar = ChartPoint::from_slice(&[0.0, 0.0]);
        let w = apply_bump(&m, &xbar, &raw, BumpFunction::new(0.4, 0.8).unwrap()).unwrap();
        let x = ChartPoint::from_slice(&[r * angle.cos(), r * angle.sin()]);
        let a = lie_derivative(&m, f.as_ref(), &w, &x, t).unwrap();
        let b = lie_derivative(&m, f.as_ref(), &raw, &x, t).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
    }
}

// ------------------------------------------------------------- perturbation

fn linear_estimates() -> &'static BoundEstimates {
    static EST: OnceLock<BoundEstimates> = OnceLock::new();
    EST.get_or_init(|| {
        let m = euclid2();
        let f = field(&["-x1", "-x2"]);
        let w = LyapunovCandidate::from_expression("x1^2 + x2^2", 2, &Params::new()).unwrap();
        let opts = VerifyOptions {
            region: 1.0,
            ..Default::default()
        };
        verify_triple_asymptotic(&m, f.as_ref(), &ChartPoint::from_slice(&[0.0, 0.0]), &w, &opts).unwrap()
    })
}

proptest! {
    #[test]
    fn ultimate_radius_grows_with_delta(a in 0.0f64..0.2, b in 0.0f64..0.2) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let est = linear_estimates();
        let rho = |delta| {
            let sys = PerturbedSystem::new(field(&["-x1", "-x2"]), field(&["0", "0"]), delta).unwrap();
            ultimate_bound(&sys, est, 0.5, 0.5, 1.0).unwrap().rho
        };
        prop_assert!(rho(lo) <= rho(hi));
    }

    #[test]
    fn exponential_constants_satisfy_their_defining_relations(l in prop::array::uniform4(0.1f64..10.0)) {
        let c = ExpBoundConstants::from_lambdas(l).unwrap();
        prop_assert!(close(l[0] * c.k * c.k, l[1], 1e-12));
        prop_assert!(close(2.0 * c.gamma * l[1], l[2], 1e-12));
        prop_assert!(close(c.zeta * l[2] * l[0], l[3] * l[1], 1e-12));
        prop_assert!(close(c.hypothesis_ratio, c.k / c.zeta, 1e-12));
        prop_assert!(c.k >= 1.0 || l[1] < l[0]);
    }
}
