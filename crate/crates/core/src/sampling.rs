//! Seeded sampling helpers. Every randomized routine draws from a single
//! [`SampleRng`] created from a `u64` seed so reports are reproducible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::quadratic_norm;

pub type SampleRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform direction on the Euclidean unit sphere in `R^n`.
pub fn unit_direction(rng: &mut SampleRng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Direction uniform with respect to the inner product `g`, unit `g`-norm.
pub fn g_unit_direction(rng: &mut SampleRng, g: &DMatrix<f64>) -> DVector<f64> {
    let u = unit_direction(rng, g.nrows());
    // v = g^{-1/2} u has unit g-norm and is uniform on the g-sphere
    match g.clone().cholesky() {
        Some(ch) => {
            let lt = ch.l().transpose();
            let v = lt.solve_upper_triangular(&u).unwrap_or_else(|| u.clone());
            let norm = quadratic_norm(g, &v);
            v / norm
        }
        None => u,
    }
}

/// Log-uniform draw in `[lo, hi]`.
pub fn log_uniform(rng: &mut SampleRng, lo: f64, hi: f64) -> f64 {
    let u: f64 = rng.random();
    (lo.ln() + u * (hi.ln() - lo.ln())).exp()
}

/// Radius uniform in volume for an `n`-ball of radius `r`.
pub fn ball_radius(rng: &mut SampleRng, r: f64, n: usize) -> f64 {
    let u: f64 = rng.random();
    r * u.powf(1.0 / n as f64)
}

/// The fixed direction fan `±e_i, ±(1,…,1)/√n, ±(1,−1,…)/√n` (2n + 4 entries).
pub fn direction_fan(n: usize) -> Vec<DVector<f64>> {
    let mut fan = Vec::with_capacity(2 * n + 4);
    for i in 0..n {
        let e = DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
        fan.push(e.clone());
        fan.push(-e);
    }
    let s = (n as f64).sqrt();
    let ones = DVector::from_element(n, 1.0 / s);
    let alt = DVector::from_fn(n, |k, _| if k % 2 == 0 { 1.0 / s } else { -1.0 / s });
    fan.push(ones.clone());
    fan.push(-ones);
    fan.push(alt.clone());
    fan.push(-alt);
    fan
}
