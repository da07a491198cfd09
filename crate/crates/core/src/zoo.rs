//! Built-in manifolds, their closed-form geometry, and the registry of
//! reference systems with known stability behavior.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Params;
use crate::manifold::{ChartDomain, ClosedForm, ManifoldDescriptor};

pub const MANIFOLD_NAMES: [&str; 5] = ["euclidean", "circle", "sphere2", "poincare-disk", "flat-torus"];

/// Chart used for the round 2-sphere.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SphereChart {
    /// `(θ, φ)` with `g = diag(1, sin²θ)` on `θ ∈ (0, π)`, `φ ∈ (−2π, 2π)`.
    #[default]
    Spherical,
    /// Projection from the north pole, `g = 4/(1 + |u|²)² · I`. The south
    /// pole sits at the origin and the north pole at infinity.
    Stereographic,
}

/// Optional parameters of the built-in manifolds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZooParams {
    /// Dimension of `euclidean` (default 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Half-width of the coordinate box for `euclidean` (default 10),
    /// `poincare-disk` (default 0.7) and stereographic `sphere2` (default 50).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<SphereChart>,
}

/// Looks up a built-in manifold by name.
pub fn manifold(name: &str, params: &ZooParams) -> Result<ManifoldDescriptor> {
    let no = Params::new();
    match name {
        "euclidean" => {
            let n = params.dim.unwrap_or(2);
            if n == 0 {
                return Err(Error::Precondition("euclidean dimension must be at least 1".into()));
            }
            let w = params.half_width.unwrap_or(10.0);
            let rows: Vec<Vec<&str>> = (0..n)
                .map(|i| (0..n).map(|j| if i == j { "1" } else { "0" }).collect())
                .collect();
            Ok(
                ManifoldDescriptor::from_expressions(name, &rows, ChartDomain::cube(n, -w, w), &no)?
                    .with_oracle(Arc::new(Flat)),
            )
        }
        "circle" => Ok(ManifoldDescriptor::from_expressions(
            name,
            &[vec!["1"]],
            ChartDomain::new(vec![0.0], vec![2.0 * PI])?,
            &no,
        )?
        .with_oracle(Arc::new(Flat))),
        "flat-torus" => Ok(ManifoldDescriptor::from_expressions(
            name,
            &[vec!["1", "0"], vec!["0", "1"]],
            ChartDomain::cube(2, 0.0, 2.0 * PI),
            &no,
        )?
        .with_oracle(Arc::new(Flat))),
        "sphere2" => match params.chart.unwrap_or_default() {
            SphereChart::Spherical => Ok(ManifoldDescriptor::from_expressions(
                name,
                &[vec!["1", "0"], vec!["0", "sin(x1)^2"]],
                ChartDomain::new(vec![0.0, -2.0 * PI], vec![PI, 2.0 * PI])?,
                &no,
            )?
            .with_oracle(Arc::new(SphereOracle))),
            SphereChart::Stereographic => {
                let w = params.half_width.unwrap_or(50.0);
                let e = "4/(1 + x1^2 + x2^2)^2";
                Ok(ManifoldDescriptor::from_expressions(
                    name,
                    &[vec![e, "0"], vec!["0", e]],
                    ChartDomain::cube(2, -w, w),
                    &no,
                )?
                .with_oracle(Arc::new(StereographicOracle)))
            }
        },
        "poincare-disk" => {
            let w = params.half_width.unwrap_or(0.7);
            if !(w > 0.0 && w < std::f64::consts::FRAC_1_SQRT_2) {
                return Err(Error::Precondition(format!(
                    "poincare-disk half-width must lie in (0, 1/√2) so the box stays inside the disk, got {w}"
                )));
            }
            let e = "4/(1-(x1^2+x2^2))^2";
            Ok(ManifoldDescriptor::from_expressions(
                name,
                &[vec![e, "0"], vec!["0", e]],
                ChartDomain::cube(2, -w, w),
                &no,
            )?
            .with_oracle(Arc::new(PoincareOracle)))
        }
        other => Err(Error::Precondition(format!(
            "unknown manifold `{other}`; available: {}",
            MANIFOLD_NAMES.join(", ")
        ))),
    }
}

/// Geometry of a flat chart (`g = I`).
#[derive(Debug, Clone, Copy)]
pub struct Flat;

impl ClosedForm for Flat {
    fn exp(&self, x: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        Some(x.iter().zip(v).map(|(a, b)| a + b).collect())
    }

    fn log(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        Some(y.iter().zip(x).map(|(a, b)| a - b).collect())
    }

    fn distance(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        Some(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }
}

type V3 = [f64; 3];

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Great-circle point at arc length `s` from unit `p` along unit tangent `u`.
fn great_circle(p: V3, u: V3, s: f64) -> V3 {
    add(scale(p, s.cos()), scale(u, s.sin()))
}

fn angle_between(a: V3, b: V3) -> f64 {
    norm3(cross(a, b)).atan2(dot(a, b))
}

/// Tangent at unit `p` of length `d(p, q)` pointing toward unit `q`.
fn sphere_log(p: V3, q: V3) -> Option<V3> {
    let d = angle_between(p, q);
    if d == 0.0 {
        return Some([0.0; 3]);
    }
    let w = add(q, scale(p, -dot(p, q)));
    let wn = norm3(w);
    if wn < 1e-300 {
        return None; // antipodal
    }
    Some(scale(w, d / wn))
}

/// Round-sphere geometry in the `(θ, φ)` chart, via the embedding
/// `(sin θ cos φ, sin θ sin φ, cos θ)`.
#[derive(Debug, Clone, Copy)]
pub struct SphereOracle;

impl SphereOracle {
    pub fn embed(x: &[f64]) -> V3 {
        let (st, ct) = x[0].sin_cos();
        let (sp, cp) = x[1].sin_cos();
        [st * cp, st * sp, ct]
    }

    fn frame(x: &[f64]) -> (V3, V3) {
        let (st, ct) = x[0].sin_cos();
        let (sp, cp) = x[1].sin_cos();
        ([ct * cp, ct * sp, -st], [-sp, cp, 0.0])
    }

    fn push(x: &[f64], v: &[f64]) -> V3 {
        let (et, ep) = Self::frame(x);
        add(scale(et, v[0]), scale(ep, v[1] * x[0].sin()))
    }

    fn pull(x: &[f64], w: V3) -> Vec<f64> {
        let (et, ep) = Self::frame(x);
        vec![dot(w, et), dot(w, ep) / x[0].sin()]
    }

    /// Chart coordinates of `p`, choosing the branch of φ nearest `phi_ref`.
    fn chart(p: V3, phi_ref: f64) -> Vec<f64> {
        let theta = (p[0] * p[0] + p[1] * p[1]).sqrt().atan2(p[2]);
        let raw = p[1].atan2(p[0]);
        let k = ((phi_ref - raw) / (2.0 * PI)).round();
        vec![theta, raw + 2.0 * PI * k]
    }
}

impl ClosedForm for SphereOracle {
    fn exp(&self, x: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        let p = Self::embed(x);
        let w = Self::push(x, v);
        let len = norm3(w);
        if len == 0.0 {
            return Some(x.to_vec());
        }
        let u = scale(w, 1.0 / len);
        // follow the circle in small arcs so φ is unwrapped continuously
        let pieces = ((len / 0.05).ceil() as usize).max(1);
        let mut phi = x[1];
        let mut out = x.to_vec();
        for i in 1..=pieces {
            let q = great_circle(p, u, len * i as f64 / pieces as f64);
            out = Self::chart(q, phi);
            phi = out[1];
        }
        Some(out)
    }

    fn log(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let w = sphere_log(Self::embed(x), Self::embed(y))?;
        Some(Self::pull(x, w))
    }

    fn distance(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        Some(angle_between(Self::embed(x), Self::embed(y)))
    }
}

/// Round-sphere geometry in stereographic coordinates.
#[derive(Debug, Clone, Copy)]
pub struct StereographicOracle;

impl StereographicOracle {
    pub fn embed(u: &[f64]) -> V3 {
        let s = u[0] * u[0] + u[1] * u[1];
        [2.0 * u[0] / (1.0 + s), 2.0 * u[1] / (1.0 + s), (s - 1.0) / (1.0 + s)]
    }

    pub fn chart(p: V3) -> Vec<f64> {
        vec![p[0] / (1.0 - p[2]), p[1] / (1.0 - p[2])]
    }

    /// Columns `∂P/∂u_1`, `∂P/∂u_2` of the embedding.
    fn frame(u: &[f64]) -> (V3, V3) {
        let s = u[0] * u[0] + u[1] * u[1];
        let d = (1.0 + s) * (1.0 + s);
        let e1 = [
            2.0 * (1.0 + s - 2.0 * u[0] * u[0]) / d,
            -4.0 * u[0] * u[1] / d,
            4.0 * u[0] / d,
        ];
        let e2 = [
            -4.0 * u[0] * u[1] / d,
            2.0 * (1.0 + s - 2.0 * u[1] * u[1]) / d,
            4.0 * u[1] / d,
        ];
        (e1, e2)
    }
}

impl ClosedForm for StereographicOracle {
    fn exp(&self, x: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        let (e1, e2) = Self::frame(x);
        let w = add(scale(e1, v[0]), scale(e2, v[1]));
        let len = norm3(w);
        if len == 0.0 {
            return Some(x.to_vec());
        }
        let q = great_circle(Self::embed(x), scale(w, 1.0 / len), len);
        Some(Self::chart(q))
    }

    fn log(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let w = sphere_log(Self::embed(x), Self::embed(y))?;
        // the frame is orthogonal with |e_i|² = 4/(1+|u|²)²
        let (e1, e2) = Self::frame(x);
        Some(vec![dot(w, e1) / dot(e1, e1), dot(w, e2) / dot(e2, e2)])
    }

    fn distance(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        Some(angle_between(Self::embed(x), Self::embed(y)))
    }
}

/// Hyperbolic geometry of the Poincaré disk, using the Möbius map that
/// moves the base point to the origin.
#[derive(Debug, Clone, Copy)]
pub struct PoincareOracle;

type C = (f64, f64);

fn cmul(a: C, b: C) -> C {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn cdiv(a: C, b: C) -> C {
    let d = b.0 * b.0 + b.1 * b.1;
    ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
}

/// `z ↦ (z − a) / (1 − ā z)`.
fn mobius(a: C, z: C) -> C {
    let num = (z.0 - a.0, z.1 - a.1);
    let abar_z = cmul((a.0, -a.1), z);
    cdiv(num, (1.0 - abar_z.0, -abar_z.1))
}

impl ClosedForm for PoincareOracle {
    fn exp(&self, x: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        let a = (x[0], x[1]);
        let s = 1.0 - (a.0 * a.0 + a.1 * a.1);
        let w = (v[0] / s, v[1] / s);
        let len = (w.0 * w.0 + w.1 * w.1).sqrt();
        if len == 0.0 {
            return Some(x.to_vec());
        }
        let r = len.tanh() / len;
        let z = mobius((-a.0, -a.1), (w.0 * r, w.1 * r));
        Some(vec![z.0, z.1])
    }

    fn log(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let a = (x[0], x[1]);
        let s = 1.0 - (a.0 * a.0 + a.1 * a.1);
        let z = mobius(a, (y[0], y[1]));
        let len = (z.0 * z.0 + z.1 * z.1).sqrt();
        if len == 0.0 {
            return Some(vec![0.0, 0.0]);
        }
        let r = len.atanh() / len * s;
        Some(vec![z.0 * r, z.1 * r])
    }

    fn distance(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        let dx = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
        let nx = 1.0 - (x[0] * x[0] + x[1] * x[1]);
        let ny = 1.0 - (y[0] * y[0] + y[1] * y[1]);
        Some((1.0 + 2.0 * dx / (nx * ny)).acosh())
    }
}

/// Stability behavior documented for a registry system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectedBehavior {
    Stable,
    AsymptoticallyStable,
    ExponentiallyStable,
    Unstable,
}

/// A reference system shipped with the tool.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrySystem {
    pub manifold: &'static str,
    pub name: &'static str,
    pub dim: usize,
    pub field: &'static [&'static str],
    pub equilibrium: &'static [f64],
    /// Region radius (Riemannian) used for classification.
    pub region: f64,
    /// Length of the observation window.
    pub window: f64,
    pub expected: ExpectedBehavior,
    pub description: &'static str,
}

impl RegistrySystem {
    pub fn manifold_params(&self) -> ZooParams {
        ZooParams {
            dim: (self.manifold == "euclidean").then_some(self.dim),
            ..Default::default()
        }
    }
}

pub const SYSTEMS: &[RegistrySystem] = &[
    RegistrySystem {
        manifold: "euclidean",
        name: "linear-stable",
        dim: 2,
        field: &["-x1", "-x2"],
        equilibrium: &[0.0, 0.0],
        region: 1.0,
        window: 10.0,
        expected: ExpectedBehavior::ExponentiallyStable,
        description: "ẋ = −x; every trajectory decays as e^(−t)",
    },
    RegistrySystem {
        manifold: "euclidean",
        name: "spiral",
        dim: 2,
        field: &["-0.1*x1 + x2", "-x1 - 0.1*x2"],
        equilibrium: &[0.0, 0.0],
        region: 1.0,
        window: 80.0,
        expected: ExpectedBehavior::ExponentiallyStable,
        description: "lightly damped rotation with eigenvalues −0.1 ± i",
    },
    RegistrySystem {
        manifold: "euclidean",
        name: "cubic-decay",
        dim: 1,
        field: &["-x1^3"],
        equilibrium: &[0.0],
        region: 1.0,
        window: 20.0,
        expected: ExpectedBehavior::Stable,
        description: "ẋ = −x³; converges like t^(−1/2), too slowly to register as asymptotic over the window near 0",
    },
    RegistrySystem {
        manifold: "circle",
        name: "pendulum-gradient",
        dim: 1,
        field: &["-sin(x1 - pi)"],
        equilibrium: &[PI],
        region: 0.3,
        window: 10.0,
        expected: ExpectedBehavior::ExponentiallyStable,
        description: "gradient flow of 1 + cos θ, locally exponential with rate 1 at θ = π",
    },
    RegistrySystem {
        manifold: "sphere2",
        name: "gradient-to-pole",
        dim: 2,
        field: &["cos(x1)*cos(x2)", "-sin(x2)/sin(x1)"],
        equilibrium: &[FRAC_PI_2, 0.0],
        region: 0.5,
        window: 10.0,
        expected: ExpectedBehavior::ExponentiallyStable,
        description: "gradient ascent of cos d(·, p) toward the point p = (π/2, 0)",
    },
    RegistrySystem {
        manifold: "poincare-disk",
        name: "radial-contraction",
        dim: 2,
        field: &["-x1", "-x2"],
        equilibrium: &[0.0, 0.0],
        region: 0.5,
        window: 10.0,
        expected: ExpectedBehavior::ExponentiallyStable,
        description: "chart contraction ẋ = −x toward the center of the disk",
    },
];

pub fn system(manifold: &str, name: &str) -> Result<&'static RegistrySystem> {
    SYSTEMS
        .iter()
        .find(|s| s.manifold == manifold && s.name == name)
        .ok_or_else(|| {
            let names: Vec<String> = SYSTEMS.iter().map(|s| format!("{}/{}", s.manifold, s.name)).collect();
            Error::Precondition(format!(
                "unknown system `{manifold}/{name}`; available: {}",
                names.join(", ")
            ))
        })
}
