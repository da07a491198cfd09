//! Dense helpers for the small (n ≤ 4 in practice) systems that appear in
//! the inner loops. Matrices are row-major slices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Metric inversion refuses condition numbers beyond this.
pub const METRIC_CONDITION_LIMIT: f64 = 1e12;

/// In-place Cholesky factor of an SPD matrix (lower triangle). Returns the
/// squared ratio of the largest to smallest pivot, a cheap lower estimate of
/// the condition number; `None` when a pivot is not positive.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> Option<f64> {
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let l = d.sqrt();
        a[j * n + j] = l;
        dmin = dmin.min(l);
        dmax = dmax.max(l);
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l;
        }
    }
    Some((dmax / dmin).powi(2))
}

/// Solves `L Lᵀ x = b` in place given the factor from [`cholesky_in_place`].
pub(crate) fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    match m.nrows() {
        1 => (m[(0, 0)], m[(0, 0)]),
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mean = 0.5 * (a + d);
            let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            (mean - r, mean + r)
        }
        _ => {
            let eig = SymmetricEigen::new(m.clone());
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (min, max)
        }
    }
}

/// 2-norm condition number via singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `m x = b`, refusing when the condition number exceeds `limit`.
pub fn solve_guarded(m: &DMatrix<f64>, b: &DVector<f64>, limit: f64) -> Result<DVector<f64>> {
    let condition = condition_number(m);
    if !(condition <= limit) {
        return Err(Error::Singular { condition });
    }
    m.clone().lu().solve(b).ok_or(Error::Singular { condition })
}

/// `√(aᵀ m a)` for a symmetric positive matrix.
pub fn quadratic_norm(m: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    (a.dot(&(m * a))).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        let mut a = vec![4.0, 1.0, 1.0, 3.0];
        let cond = cholesky_in_place(&mut a, 2).unwrap();
        assert!(cond >= 1.0);
        let mut b = vec![1.0, 2.0];
        cholesky_solve(&a, 2, &mut b);
        // [4 1; 1 3] x = [1 2] → x = [1/11, 7/11]
        assert!((b[0] - 1.0 / 11.0).abs() < 1e-15);
        assert!((b[1] - 7.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cholesky_in_place(&mut a, 2).is_none());
    }

    #[test]
    fn extremes_match_general_solver() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (lo, hi) = symmetric_extremes(&m);
        let eig = SymmetricEigen::new(m).eigenvalues;
        let (elo, ehi) = (eig.min(), eig.max());
        assert!((lo - elo).abs() < 1e-14 && (hi - ehi).abs() < 1e-14);
    }

    #[test]
    fn guarded_solve_refuses_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(solve_guarded(&m, &b, 1e8), Err(Error::Singular { .. })));
    }
}
