//! Small dense symmetric-matrix routines used across the crate.
//!
//! Everything here operates on `ndarray::Array2<f64>` and is deliberately
//! dependency-free: the matrices involved are covariance blocks (at most a few
//! hundred columns), where a straightforward O(p³) Cholesky is exact enough and
//! keeps results bit-reproducible across platforms and thread counts.

use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Returns `None` when the matrix is not (numerically) positive definite,
/// i.e. a pivot falls at or below `PD_PIVOT_FLOOR` times the largest diagonal
/// entry. The caller decides whether that is an error or an expected outcome
/// (it is how singular blocks are detected).
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let p = a.nrows();
    debug_assert_eq!(p, a.ncols(), "cholesky needs a square matrix");
    let scale = (0..p).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max);
    let floor = PD_PIVOT_FLOOR * scale.max(f64::MIN_POSITIVE);
    let mut l = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= floor {
                    return None;
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Relative pivot floor under which a Cholesky pivot counts as a PD failure.
/// 1e-12 of the largest diagonal entry: small enough to accept genuinely
/// ill-conditioned but invertible sample covariances, large enough to reject
/// rank-deficient ones (p_k >= n) reliably.
const PD_PIVOT_FLOOR: f64 = 1e-12;

/// log-determinant of a symmetric positive-definite matrix via Cholesky.
pub fn logdet_spd(a: &Array2<f64>) -> Option<f64> {
    let l = cholesky(a)?;
    Some(2.0 * (0..a.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>())
}

/// Solve L x = b for lower-triangular L.
pub fn solve_lower(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let p = l.nrows();
    let mut x = b.clone();
    for i in 0..p {
        for k in 0..i {
            let t = l[[i, k]] * x[k];
            x[i] -= t;
        }
        x[i] /= l[[i, i]];
    }
    x
}

/// Solve Lᵀ x = b for lower-triangular L.
pub fn solve_lower_transpose(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let p = l.nrows();
    let mut x = b.clone();
    for i in (0..p).rev() {
        for k in (i + 1)..p {
            let t = l[[k, i]] * x[k];
            x[i] -= t;
        }
        x[i] /= l[[i, i]];
    }
    x
}

/// Inverse of a symmetric positive-definite matrix via Cholesky solves.
pub fn inverse_spd(a: &Array2<f64>) -> Option<Array2<f64>> {
    let p = a.nrows();
    let l = cholesky(a)?;
    let mut inv = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        let mut e = Array1::<f64>::zeros(p);
        e[j] = 1.0;
        let y = solve_lower(&l, &e);
        let x = solve_lower_transpose(&l, &y);
        inv.column_mut(j).assign(&x);
    }
    // Symmetrize: the column solves agree only up to rounding.
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = m;
            inv[[j, i]] = m;
        }
    }
    Some(inv)
}

/// Smallest eigenvalue of a symmetric positive-semidefinite matrix, located by
/// bisection on "does A − δI still admit a Cholesky factorization".
///
/// Returns a value guaranteed to be ≤ the true smallest eigenvalue and within
/// `tol` of it, which is exactly the one-sided bound needed when topping up a
/// diagonal to enforce an eigenvalue floor.
pub fn smallest_eigenvalue_lower_bound(a: &Array2<f64>, tol: f64) -> f64 {
    let p = a.nrows();
    // λ_min ≤ min_i a_ii for symmetric matrices; eigenvalues of a PSD matrix
    // are also ≥ 0, which brackets the search.
    let mut hi = (0..p).map(|i| a[[i, i]]).fold(f64::INFINITY, f64::min);
    let mut lo = 0.0_f64;
    if hi <= 0.0 {
        return 0.0;
    }
    if shifted_is_pd(a, hi) {
        return hi; // min diagonal equals λ_min only for diagonal matrices
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if shifted_is_pd(a, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn shifted_is_pd(a: &Array2<f64>, shift: f64) -> bool {
    let p = a.nrows();
    let mut shifted = a.clone();
    for i in 0..p {
        shifted[[i, i]] -= shift;
    }
    cholesky(&shifted).is_some()
}
