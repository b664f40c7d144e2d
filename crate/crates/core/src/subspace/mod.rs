//! Rank-tolerant dense linear algebra: compact SVD, column spaces,
//! orthogonal complements, null spaces and pseudo-inverses.
//!
//! The decompositions are backed by in-house Jacobi iterations (see
//! [`jacobi`]); for the small dense matrices handled here they are both
//! fast enough and dependable on edge cases such as exact projectors and
//! rank-deficient blocks. Every routine applies a deterministic sign
//! convention (the largest-magnitude entry of each basis column is made
//! positive), so identical inputs produce bit-identical bases.

mod jacobi;

use nalgebra::{DMatrix, DVector};

use crate::error::{FactorError, FactorResult};
use crate::tolerance::RankTolerance;

/// A matrix with orthonormal columns, possibly zero of them.
///
/// Carries its ambient dimension so that empty bases (rank-0 subspaces)
/// remain well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    ambient: usize,
    cols: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Wraps a matrix after checking `BᵀB = I` to 1e-10.
    pub fn new(cols: DMatrix<f64>) -> FactorResult<Self> {
        check_finite(&cols, "orthonormal basis")?;
        let r = cols.ncols();
        if r > cols.nrows() {
            return Err(FactorError::DimensionMismatch {
                context: "orthonormal basis (more columns than rows)",
                expected: cols.nrows(),
                got: r,
            });
        }
        let gram = cols.transpose() * &cols;
        let err = (&gram - DMatrix::identity(r, r)).abs().max();
        if r > 0 && err > 1e-10 {
            return Err(FactorError::NonFinite {
                context: "matrix columns are not orthonormal",
            });
        }
        Ok(Self {
            ambient: cols.nrows(),
            cols,
        })
    }

    /// Wraps without the orthonormality check; for internal use where the
    /// columns come from a decomposition that guarantees it.
    pub(crate) fn new_unchecked(cols: DMatrix<f64>) -> Self {
        Self {
            ambient: cols.nrows(),
            cols,
        }
    }

    /// The basis of the trivial subspace `{0}` of `R^ambient`.
    pub fn empty(ambient: usize) -> Self {
        Self {
            ambient,
            cols: DMatrix::zeros(ambient, 0),
        }
    }

    /// The standard basis of the full space `R^n`.
    pub fn full(n: usize) -> Self {
        Self {
            ambient: n,
            cols: DMatrix::identity(n, n),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    /// Number of basis vectors (the subspace dimension).
    pub fn rank(&self) -> usize {
        self.cols.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.cols
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.cols
    }

    /// The orthogonal projector `BBᵀ` onto the spanned subspace.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.cols * self.cols.transpose()
    }

    /// Orthonormal basis of the orthogonal complement, so that
    /// `[B C]` is square orthogonal.
    pub fn complement(&self) -> OrthonormalBasis {
        complement_of(&self.cols)
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>, context: &'static str) -> FactorResult<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FactorError::NonFinite { context })
    }
}

pub(crate) fn check_finite_vec(v: &DVector<f64>, context: &'static str) -> FactorResult<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FactorError::NonFinite { context })
    }
}

/// Flips each column so its largest-magnitude entry is positive.
/// Returns which columns were flipped so paired factors can follow suit.
fn normalise_column_signs(m: &mut DMatrix<f64>) -> Vec<bool> {
    let mut flipped = vec![false; m.ncols()];
    for j in 0..m.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..m.nrows() {
            let a = m[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if m.nrows() > 0 && m[(best, j)] < 0.0 {
            for i in 0..m.nrows() {
                m[(i, j)] = -m[(i, j)];
            }
            flipped[j] = true;
        }
    }
    flipped
}

/// Result of a compact (rank-revealing) singular value decomposition.
#[derive(Debug, Clone)]
pub struct CompactSvd {
    pub u: OrthonormalBasis,
    /// Strictly positive singular values, descending.
    pub singular_values: DVector<f64>,
    pub v: OrthonormalBasis,
}

/// Compact SVD of `m`: `m ≈ U diag(s) Vᵀ` keeping only singular values above
/// the rank cutoff.
pub fn compact_svd(m: &DMatrix<f64>, tol: RankTolerance) -> FactorResult<CompactSvd> {
    compact_svd_scaled(m, tol, 0.0)
}

/// Compact SVD with an absolute floor on the scale used for the rank cutoff.
///
/// When a matrix is the residual of a cancellation (or a projection of
/// orthonormal blocks), its own largest singular value is not a meaningful
/// scale; callers pass the scale of the quantities it was built from.
pub(crate) fn compact_svd_scaled(
    m: &DMatrix<f64>,
    tol: RankTolerance,
    scale_floor: f64,
) -> FactorResult<CompactSvd> {
    check_finite(m, "compact_svd input")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(CompactSvd {
            u: OrthonormalBasis::empty(rows),
            singular_values: DVector::zeros(0),
            v: OrthonormalBasis::empty(cols),
        });
    }
    let (u_full, s_full, v_full) = jacobi::hestenes_svd(m);

    let mut idx: Vec<usize> = (0..s_full.len()).collect();
    idx.sort_by(|&a, &b| s_full[b].partial_cmp(&s_full[a]).expect("finite singular values"));

    let s_max = s_full[idx[0]];
    let cutoff = tol.cutoff(rows, cols, s_max.max(scale_floor));
    let rank = idx.iter().filter(|&&i| s_full[i] > cutoff).count();

    let mut u = DMatrix::zeros(rows, rank);
    let mut v = DMatrix::zeros(cols, rank);
    let mut s = DVector::zeros(rank);
    for (j, &i) in idx.iter().take(rank).enumerate() {
        u.set_column(j, &u_full.column(i));
        v.set_column(j, &v_full.column(i));
        s[j] = s_full[i];
    }
    let flips = normalise_column_signs(&mut u);
    for (j, f) in flips.iter().enumerate() {
        if *f {
            for i in 0..v.nrows() {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
    Ok(CompactSvd {
        u: OrthonormalBasis::new_unchecked(u),
        singular_values: s,
        v: OrthonormalBasis::new_unchecked(v),
    })
}

/// Orthonormal basis of the column space (range) of `m`.
pub fn column_space(m: &DMatrix<f64>, tol: RankTolerance) -> FactorResult<OrthonormalBasis> {
    Ok(compact_svd(m, tol)?.u)
}

/// Column space with an absolute scale floor for the rank cutoff; used on
/// matrices assembled from orthonormal blocks, whose natural scale is one.
pub(crate) fn column_space_scaled(
    m: &DMatrix<f64>,
    tol: RankTolerance,
    scale_floor: f64,
) -> FactorResult<OrthonormalBasis> {
    Ok(compact_svd_scaled(m, tol, scale_floor)?.u)
}

/// Orthonormal basis of the null space (kernel) of `m`.
pub fn null_space(m: &DMatrix<f64>, tol: RankTolerance) -> FactorResult<OrthonormalBasis> {
    check_finite(m, "null_space input")?;
    let svd = compact_svd(m, tol)?;
    Ok(complement_of(svd.v.matrix()))
}

/// Null space with an absolute scale floor (see [`column_space_scaled`]).
pub(crate) fn null_space_scaled(
    m: &DMatrix<f64>,
    tol: RankTolerance,
    scale_floor: f64,
) -> FactorResult<OrthonormalBasis> {
    check_finite(m, "null_space input")?;
    let svd = compact_svd_scaled(m, tol, scale_floor)?;
    Ok(complement_of(svd.v.matrix()))
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// (orthonormal) columns of `b`.
fn complement_of(b: &DMatrix<f64>) -> OrthonormalBasis {
    let n = b.nrows();
    let r = b.ncols();
    if r == 0 {
        return OrthonormalBasis::full(n);
    }
    if r >= n {
        return OrthonormalBasis::empty(n);
    }
    // Eigenvectors of the complementary projector I − BBᵀ at eigenvalue 1.
    let proj = DMatrix::identity(n, n) - b * b.transpose();
    let (vecs, vals) = jacobi::jacobi_eigen(&proj);
    let mut keep: Vec<usize> = (0..n).filter(|&i| vals[i] > 0.5).collect();
    keep.truncate(n - r);
    debug_assert_eq!(keep.len(), n - r, "projector spectrum must be {{0, 1}}");
    let mut c = DMatrix::zeros(n, keep.len());
    for (j, &idx) in keep.iter().enumerate() {
        c.set_column(j, &vecs.column(idx));
    }
    normalise_column_signs(&mut c);
    OrthonormalBasis::new_unchecked(c)
}

/// Moore–Penrose pseudo-inverse via the compact SVD.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: RankTolerance) -> FactorResult<DMatrix<f64>> {
    let svd = compact_svd(m, tol)?;
    let r = svd.singular_values.len();
    if r == 0 {
        return Ok(DMatrix::zeros(m.ncols(), m.nrows()));
    }
    let mut vs = svd.v.into_matrix();
    for j in 0..r {
        let inv = 1.0 / svd.singular_values[j];
        for i in 0..vs.nrows() {
            vs[(i, j)] *= inv;
        }
    }
    Ok(vs * svd.u.matrix().transpose())
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and the
/// deterministic column sign convention; input is symmetrised first.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "sym_eigen_desc requires a square matrix");
    if n == 0 {
        return (DMatrix::zeros(0, 0), DVector::zeros(0));
    }
    let sym = (m + m.transpose()) * 0.5;
    let (raw_vecs, raw_vals) = jacobi::jacobi_eigen(&sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        raw_vals[b]
            .partial_cmp(&raw_vals[a])
            .expect("finite eigenvalues")
    });
    let mut vecs = DMatrix::zeros(n, n);
    let mut vals = DVector::zeros(n);
    for (j, &i) in idx.iter().enumerate() {
        vecs.set_column(j, &raw_vecs.column(i));
        vals[j] = raw_vals[i];
    }
    normalise_column_signs(&mut vecs);
    (vecs, vals)
}

/// Cholesky factorisation `M = LLᵀ` with a relative pivot threshold; `None`
/// when a pivot falls at or below the threshold (not positive definite).
///
/// Substitution-based solves through this factor are backward stable, which
/// matters for the information-form block operations: the explicit inverse
/// amplifies errors by the squared cross-block magnitude, a solve only by
/// the bounded regression operator.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>, tol: RankTolerance) -> Option<Self> {
        let n = m.nrows();
        assert_eq!(n, m.ncols(), "Cholesky requires a square matrix");
        let mut l = DMatrix::zeros(n, n);
        let diag_scale = (0..n)
            .map(|i| m[(i, i)].abs())
            .fold(1.0f64, f64::max);
        let pivot_floor = tol.relative_for(n, n) * diag_scale;
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= pivot_floor {
                return None;
            }
            let dj = d.sqrt();
            l[(j, j)] = dj;
            for i in j + 1..n {
                let mut v = m[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / dj;
            }
        }
        Some(Self { l })
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.l.nrows();
        let mut y = b.clone();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[(i, k)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[(k, i)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        y
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            out.set_column(j, &self.solve_vec(&b.column(j).into_owned()));
        }
        out
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        self.solve_mat(&DMatrix::identity(n, n))
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Whether a symmetric matrix is positive definite: a symmetric
/// factorisation must succeed with pivots above the rank threshold.
pub fn is_positive_definite(m: &DMatrix<f64>, tol: RankTolerance) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    SpdFactor::new(m, tol).is_some()
}

/// `log det` of a symmetric positive-definite matrix.
pub fn logdet_spd(m: &DMatrix<f64>, context: &'static str) -> FactorResult<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = SpdFactor::new(m, RankTolerance::Auto)
        .ok_or(FactorError::NotPositiveDefinite { context })?;
    Ok(chol.logdet())
}

/// Solves `m x = b` for symmetric positive-definite `m`.
pub fn solve_spd(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    context: &'static str,
) -> FactorResult<DVector<f64>> {
    if m.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let chol = SpdFactor::new(m, RankTolerance::Auto)
        .ok_or(FactorError::NotPositiveDefinite { context })?;
    Ok(chol.solve_vec(b))
}
