//! Jacobi-rotation decompositions for small dense matrices.
//!
//! Cyclic Jacobi for symmetric eigenproblems and the one-sided Hestenes
//! variant for singular value decompositions. Both are backward stable and
//! converge quadratically; for the matrix sizes this crate works with they
//! are more than fast enough and, importantly, they do not share failure
//! modes with any external implicit-shift code.

use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS: usize = 60;

/// Symmetric eigendecomposition `M = V diag(w) Vᵀ` via cyclic Jacobi.
/// Eigenvalues are returned unsorted; the input is used as given (callers
/// symmetrise first).
pub(crate) fn jacobi_eigen(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    if n < 2 {
        return (v, a.diagonal());
    }
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let abs_tol = f64::EPSILON * norm * 1e-3;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                // Relative criterion: rotating while |a_pq| is significant
                // against √(a_pp a_qq) preserves the high relative accuracy
                // of small eigenvalues on graded positive matrices. The
                // absolute floor guards indefinite inputs where a diagonal
                // product can vanish.
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let rel_scale = (app.abs() * aqq.abs()).sqrt();
                if apq.abs() <= 1e-15 * rel_scale || apq.abs() <= abs_tol {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for i in 0..n {
                    let aip = a[(i, p)];
                    let aiq = a[(i, q)];
                    a[(i, p)] = c * aip - s * aiq;
                    a[(i, q)] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[(p, j)];
                    let aqj = a[(q, j)];
                    a[(p, j)] = c * apj - s * aqj;
                    a[(q, j)] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (v, a.diagonal())
}

/// Thin SVD `M = U diag(s) Vᵀ` via one-sided Jacobi on the columns.
/// Returns `(u, s, v)` with `s` unsorted and possibly containing zeros; the
/// `U` columns for zero singular values are zero vectors.
pub(crate) fn hestenes_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    if rows < cols {
        let (v, s, u) = hestenes_svd(&m.transpose());
        return (u, s, v);
    }
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(cols, cols);
    if cols > 0 {
        let norm_sq: f64 = a.iter().map(|x| x * x).sum();
        let tol_sq = (f64::EPSILON * f64::EPSILON) * norm_sq.max(f64::MIN_POSITIVE);
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for p in 0..cols.saturating_sub(1) {
                for q in p + 1..cols {
                    let mut app = 0.0;
                    let mut aqq = 0.0;
                    let mut apq = 0.0;
                    for i in 0..rows {
                        app += a[(i, p)] * a[(i, p)];
                        aqq += a[(i, q)] * a[(i, q)];
                        apq += a[(i, p)] * a[(i, q)];
                    }
                    if apq * apq <= tol_sq * 1e-4 || apq == 0.0 {
                        continue;
                    }
                    if apq.abs() <= 1e-15 * (app * aqq).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = if theta >= 0.0 {
                        1.0 / (theta + (1.0 + theta * theta).sqrt())
                    } else {
                        -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for i in 0..rows {
                        let aip = a[(i, p)];
                        let aiq = a[(i, q)];
                        a[(i, p)] = c * aip - s * aiq;
                        a[(i, q)] = s * aip + c * aiq;
                    }
                    for i in 0..cols {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = c * vip - s * viq;
                        v[(i, q)] = s * vip + c * viq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
    }
    let mut s = DVector::zeros(cols);
    let mut u = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        let norm = a.column(j).norm();
        s[j] = norm;
        if norm > 0.0 {
            for i in 0..rows {
                u[(i, j)] = a[(i, j)] / norm;
            }
        }
    }
    (u, s, v)
}
