//! Gaussian factors with explicit degeneracy:
//! `D(x; Q, R, Λ, h, c, g) = C(Qᵀx; Λ, h, g) · δ(Rᵀx − c)`.
//!
//! `Q` (n×(n−k)) and `R` (n×k) are semi-orthogonal with mutually
//! complementary column spaces; `Λ` is a non-negative diagonal precision over
//! the support directions, and the Dirac component pins `k` linear
//! combinations of the scope to the offset `c`. Both `k = 0` (no constraint)
//! and `k = n` (a point mass) are ordinary values; empty components act as
//! the constant one.

mod conditional;
mod kl;
mod ops;
mod serialise;

pub use conditional::{equivalent_transformation, represent_conditional, UnscentedParams};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::canonical::{symmetrise, CanonicalFactor};
use crate::error::{FactorError, FactorResult};
use crate::gmode;
use crate::scope::Scope;
use crate::subspace::{check_finite_vec, sym_eigen_desc, OrthonormalBasis};
use crate::tolerance::RankTolerance;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// First and second moments of a (possibly singular) Gaussian density.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Rank of the covariance, `n − k`.
    pub rank: usize,
}

/// Result of a pointwise log-density query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogDensity {
    /// Log value of the canonical component at an on-manifold point.
    OnManifold(f64),
    /// The point violates a hard constraint; the density is zero there.
    OffManifold,
}

impl LogDensity {
    pub fn value(self) -> Option<f64> {
        match self {
            LogDensity::OnManifold(v) => Some(v),
            LogDensity::OffManifold => None,
        }
    }
}

/// A degenerate Gaussian factor over a named scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serialise::FactorRepr", into = "serialise::FactorRepr")]
pub struct DegenerateFactor {
    pub(crate) scope: Scope,
    pub(crate) q: DMatrix<f64>,
    pub(crate) r: DMatrix<f64>,
    pub(crate) lambda: DVector<f64>,
    pub(crate) h: DVector<f64>,
    pub(crate) c: DVector<f64>,
    pub(crate) g: f64,
}

impl DegenerateFactor {
    /// Builds a factor from its parameters, validating the invariants and
    /// sorting `Λ` (with the matching columns of `Q` and entries of `h`)
    /// into descending order.
    pub fn new(
        scope: Scope,
        q: OrthonormalBasis,
        r: OrthonormalBasis,
        lambda: DVector<f64>,
        h: DVector<f64>,
        c: DVector<f64>,
        g: f64,
    ) -> FactorResult<Self> {
        let n = scope.dim();
        if q.ambient_dim() != n || r.ambient_dim() != n {
            return Err(FactorError::DimensionMismatch {
                context: "degenerate basis ambient dimension",
                expected: n,
                got: q.ambient_dim(),
            });
        }
        if q.rank() + r.rank() != n {
            return Err(FactorError::DimensionMismatch {
                context: "degenerate basis ranks (must sum to scope dim)",
                expected: n,
                got: q.rank() + r.rank(),
            });
        }
        if lambda.len() != q.rank() || h.len() != q.rank() || c.len() != r.rank() {
            return Err(FactorError::DimensionMismatch {
                context: "degenerate parameter lengths",
                expected: q.rank(),
                got: lambda.len(),
            });
        }
        check_finite_vec(&lambda, "degenerate lambda")?;
        check_finite_vec(&h, "degenerate h")?;
        check_finite_vec(&c, "degenerate c")?;
        if !g.is_finite() {
            return Err(FactorError::NonFinite {
                context: "degenerate g",
            });
        }
        if lambda.iter().any(|&l| l < -1e-10) {
            return Err(FactorError::NonFinite {
                context: "degenerate lambda must be non-negative",
            });
        }
        let cross = (q.matrix().transpose() * r.matrix()).abs().max();
        if q.rank() > 0 && r.rank() > 0 && cross > 1e-10 {
            return Err(FactorError::NonFinite {
                context: "degenerate bases are not orthogonal complements",
            });
        }
        let mut f = Self {
            scope,
            q: q.into_matrix(),
            r: r.into_matrix(),
            lambda: lambda.map(|l| l.max(0.0)),
            h,
            c,
            g,
        };
        f.sort_lambda();
        Ok(f)
    }

    /// Internal constructor for intermediate results whose invariants are
    /// guaranteed by construction.
    pub(crate) fn from_parts(
        scope: Scope,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        lambda: DVector<f64>,
        h: DVector<f64>,
        c: DVector<f64>,
        g: f64,
    ) -> Self {
        let mut f = Self {
            scope,
            q,
            r,
            lambda: lambda.map(|l| l.max(0.0)),
            h,
            c,
            g,
        };
        f.sort_lambda();
        f
    }

    fn sort_lambda(&mut self) {
        let m = self.lambda.len();
        if m < 2 {
            return;
        }
        let sorted = (0..m - 1).all(|i| self.lambda[i] >= self.lambda[i + 1]);
        if sorted {
            return;
        }
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| {
            self.lambda[b]
                .partial_cmp(&self.lambda[a])
                .expect("finite lambda")
        });
        let mut q = DMatrix::zeros(self.q.nrows(), m);
        let mut lambda = DVector::zeros(m);
        let mut h = DVector::zeros(m);
        for (j, &i) in idx.iter().enumerate() {
            q.set_column(j, &self.q.column(i));
            lambda[j] = self.lambda[i];
            h[j] = self.h[i];
        }
        self.q = q;
        self.lambda = lambda;
        self.h = h;
    }

    /// The multiplicative identity over a scope (`k = 0`, zero precision).
    pub fn vacuous(scope: Scope) -> Self {
        let n = scope.dim();
        Self {
            scope,
            q: DMatrix::identity(n, n),
            r: DMatrix::zeros(n, 0),
            lambda: DVector::zeros(n),
            h: DVector::zeros(n),
            c: DVector::zeros(0),
            g: 0.0,
        }
    }

    /// A point mass at `value` (`k = n`).
    pub fn dirac(scope: Scope, value: DVector<f64>) -> FactorResult<Self> {
        let n = scope.dim();
        check_finite_vec(&value, "dirac value")?;
        if value.len() != n {
            return Err(FactorError::DimensionMismatch {
                context: "dirac value length",
                expected: n,
                got: value.len(),
            });
        }
        Ok(Self {
            scope,
            q: DMatrix::zeros(n, 0),
            r: DMatrix::identity(n, n),
            lambda: DVector::zeros(0),
            h: DVector::zeros(0),
            c: value,
            g: 0.0,
        })
    }

    /// Converts a Gaussian density with (possibly singular) covariance into a
    /// normalised degenerate factor.
    pub fn from_gaussian(
        scope: Scope,
        mean: &DVector<f64>,
        covariance: &DMatrix<f64>,
        tol: RankTolerance,
    ) -> FactorResult<Self> {
        let n = scope.dim();
        check_finite_vec(mean, "from_gaussian mean")?;
        crate::subspace::check_finite(covariance, "from_gaussian covariance")?;
        if mean.len() != n || covariance.nrows() != n || covariance.ncols() != n {
            return Err(FactorError::DimensionMismatch {
                context: "from_gaussian shapes",
                expected: n,
                got: mean.len(),
            });
        }
        let scale = covariance.abs().max().max(1.0);
        if (covariance - covariance.transpose()).abs().max() > 1e-8 * scale {
            return Err(FactorError::NonFinite {
                context: "from_gaussian covariance is not symmetric",
            });
        }
        let (q, lambda, r) = cov_to_precision_basis(covariance, tol, 0.0)?;
        let h = DVector::from_iterator(
            lambda.len(),
            (0..lambda.len()).map(|i| lambda[i] * q.column(i).dot(mean)),
        );
        let c = r.matrix().transpose() * mean;
        let mut f = Self::from_parts(scope, q, r.into_matrix(), lambda, h, c, 0.0);
        f.g = gmode::g_value(|| f.normalising_g_inner());
        Ok(f)
    }

    /// Converts a canonical factor (a `k = 0` degenerate factor) into the
    /// degenerate parametrisation; the precision must be positive
    /// semi-definite.
    pub fn from_canonical(factor: &CanonicalFactor, tol: RankTolerance) -> FactorResult<Self> {
        let n = factor.dim();
        let (vecs, vals) = sym_eigen_desc(factor.precision());
        let max = vals.iter().cloned().fold(0.0f64, f64::max);
        let cutoff = tol.cutoff(n, n, max.max(1.0));
        if vals.iter().any(|&v| v < -cutoff) {
            return Err(FactorError::NotPositiveDefinite {
                context: "from_canonical precision",
            });
        }
        let lambda = vals.map(|v| v.max(0.0));
        let h = vecs.transpose() * factor.h();
        Ok(Self::from_parts(
            factor.scope().clone(),
            vecs,
            DMatrix::zeros(n, 0),
            lambda,
            h,
            DVector::zeros(0),
            factor.g(),
        ))
    }

    /// The canonical form of a `k = 0` factor: `K = QΛQᵀ`, `h = Q h_q`.
    pub fn to_canonical(&self) -> FactorResult<CanonicalFactor> {
        if self.degeneracy() != 0 {
            return Err(FactorError::DegeneracyDetected);
        }
        let k = symmetrise(&(&self.q * DMatrix::from_diagonal(&self.lambda) * self.q.transpose()));
        let h = &self.q * &self.h;
        CanonicalFactor::new(self.scope.clone(), k, h, self.g)
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn dim(&self) -> usize {
        self.scope.dim()
    }

    /// Degree of degeneracy `k` (number of hard constraints).
    pub fn degeneracy(&self) -> usize {
        self.r.ncols()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    /// Whether every precision entry is strictly positive, i.e. the factor
    /// can be normalised into a density.
    pub fn is_normalisable(&self) -> bool {
        self.lambda.iter().all(|&l| l > 0.0)
    }

    fn require_normalisable(&self) -> FactorResult<()> {
        if self.is_normalisable() {
            Ok(())
        } else {
            Err(FactorError::NotNormalisable)
        }
    }

    fn normalising_g_inner(&self) -> f64 {
        let m = self.lambda.len() as f64;
        let logdet: f64 = self.lambda.iter().map(|l| l.ln()).sum();
        -0.5 * self.h.dot(&self.lambda.zip_map(&self.h, |l, h| h / l))
            - 0.5 * (m * LN_2PI - logdet)
    }

    /// Replaces `g` so the factor integrates to one over its support.
    pub fn normalise(&self) -> FactorResult<Self> {
        self.require_normalisable()?;
        let mut f = self.clone();
        f.g = gmode::g_value(|| self.normalising_g_inner());
        Ok(f)
    }

    /// Mean `QΛ⁻¹h + Rc` and covariance `QΛ⁻¹Qᵀ`.
    pub fn moments(&self) -> FactorResult<Moments> {
        self.require_normalisable()?;
        let n = self.dim();
        let m = self.lambda.len();
        let mut mean = &self.r * &self.c;
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..m {
            let qi = self.q.column(i);
            let inv = 1.0 / self.lambda[i];
            mean += qi * (self.h[i] * inv);
            cov += qi * qi.transpose() * inv;
        }
        Ok(Moments {
            mean,
            covariance: symmetrise(&cov),
            rank: m,
        })
    }

    /// Log value of the factor at `x`; `OffManifold` when `Rᵀx ≠ c` beyond
    /// the tolerance.
    pub fn log_density(&self, x: &DVector<f64>, tol: RankTolerance) -> FactorResult<LogDensity> {
        if x.len() != self.dim() {
            return Err(FactorError::DimensionMismatch {
                context: "log_density point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        check_finite_vec(x, "log_density point")?;
        let rel = tol.relative_for(self.dim(), self.dim());
        let resid = (self.r.transpose() * x - &self.c).norm();
        if resid > rel.max(1e-12) * (1.0 + self.c.norm()) * (1.0 + x.norm()) {
            return Ok(LogDensity::OffManifold);
        }
        let eps = self.q.transpose() * x;
        let quad = eps.dot(&self.lambda.zip_map(&eps, |l, e| l * e));
        Ok(LogDensity::OnManifold(-0.5 * quad + self.h.dot(&eps) + self.g))
    }

    /// Canonical factor of the dense proxy
    /// `N(QΛ⁻¹h + Rc, QΛ⁻¹Qᵀ + a RRᵀ)` (test oracle; exact closed form).
    pub fn dense_limit(&self, a: f64) -> FactorResult<CanonicalFactor> {
        assert!(a > 0.0, "dense_limit requires a > 0");
        self.require_normalisable()?;
        let n = self.dim();
        let m = self.lambda.len();
        let k = self.degeneracy();
        // The proxy precision decomposes exactly: K = QΛQᵀ + a⁻¹RRᵀ.
        let mut kmat = &self.r * self.r.transpose() / a;
        for i in 0..m {
            let qi = self.q.column(i);
            kmat += qi * qi.transpose() * self.lambda[i];
        }
        let h = &self.q * &self.h + &self.r * &self.c / a;
        let logdet_k: f64 =
            self.lambda.iter().map(|l| l.ln()).sum::<f64>() + k as f64 * (1.0 / a).ln();
        let quad = self.h.dot(&self.lambda.zip_map(&self.h, |l, hh| hh / l))
            + self.c.dot(&self.c) / a;
        let g = -0.5 * quad - 0.5 * (n as f64 * LN_2PI - logdet_k);
        CanonicalFactor::new(self.scope.clone(), symmetrise(&kmat), h, g)
    }

    /// Orthonormality / complementarity / sign diagnostics used by the
    /// property suite: returns the worst violation among `QᵀQ−I`, `RᵀR−I`,
    /// `QᵀR` and negative `Λ` entries.
    pub fn invariant_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let nq = self.q.ncols();
        let nr = self.r.ncols();
        if nq > 0 {
            worst = worst.max(
                (self.q.transpose() * &self.q - DMatrix::identity(nq, nq))
                    .abs()
                    .max(),
            );
        }
        if nr > 0 {
            worst = worst.max(
                (self.r.transpose() * &self.r - DMatrix::identity(nr, nr))
                    .abs()
                    .max(),
            );
        }
        if nq > 0 && nr > 0 {
            worst = worst.max((self.q.transpose() * &self.r).abs().max());
        }
        for i in 0..self.lambda.len() {
            worst = worst.max(-self.lambda[i]);
            if i + 1 < self.lambda.len() {
                worst = worst.max(self.lambda[i + 1] - self.lambda[i]);
            }
        }
        worst
    }
}

/// Splits a symmetric PSD covariance into `(Q, Λ, R)` with `Λ` the descending
/// reciprocal spectrum over the positive directions and `R` spanning the
/// (near-)null space. Rejects significantly indefinite input.
pub(crate) fn cov_to_precision_basis(
    cov: &DMatrix<f64>,
    tol: RankTolerance,
    scale_floor: f64,
) -> FactorResult<(DMatrix<f64>, DVector<f64>, OrthonormalBasis)> {
    cov_to_precision_basis_clamped(cov, tol, scale_floor, 1e-12)
}

/// As [`cov_to_precision_basis`] with an explicit relative floor under which
/// negative eigenvalues are treated as zero variance. Residuals of
/// ill-conditioned moment matching can dip below zero by far more than a few
/// ulps, so those call sites pass a floor matching their conditioning.
pub(crate) fn cov_to_precision_basis_clamped(
    cov: &DMatrix<f64>,
    tol: RankTolerance,
    scale_floor: f64,
    neg_rel: f64,
) -> FactorResult<(DMatrix<f64>, DVector<f64>, OrthonormalBasis)> {
    let n = cov.nrows();
    if n == 0 {
        return Ok((
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            OrthonormalBasis::empty(0),
        ));
    }
    let (vecs, vals) = sym_eigen_desc(cov);
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = tol.cutoff(n, n, max.max(scale_floor));
    if vals.iter().any(|&v| v < -neg_rel * max.max(scale_floor).max(1.0)) {
        return Err(FactorError::NotPositiveDefinite {
            context: "covariance is indefinite",
        });
    }
    let rank = vals.iter().filter(|&&v| v > cutoff).count();
    // Reverse so Λ = 1/σ comes out descending.
    let mut q = DMatrix::zeros(n, rank);
    let mut lambda = DVector::zeros(rank);
    for j in 0..rank {
        let src = rank - 1 - j;
        q.set_column(j, &vecs.column(src));
        lambda[j] = 1.0 / vals[src];
    }
    let r = OrthonormalBasis::new_unchecked(q.clone()).complement();
    Ok((q, lambda, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scope2() -> Scope {
        Scope::new(vec![("x", 2)]).unwrap()
    }

    #[test]
    fn from_gaussian_identity_covariance() {
        let f = DegenerateFactor::from_gaussian(
            scope2(),
            &DVector::zeros(2),
            &DMatrix::identity(2, 2),
            RankTolerance::Auto,
        )
        .unwrap();
        assert_eq!(f.degeneracy(), 0);
        assert_abs_diff_eq!(f.lambda()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.lambda()[1], 1.0, epsilon = 1e-12);
        assert!(f.h().norm() < 1e-12);
        assert_abs_diff_eq!(f.g(), -LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn from_gaussian_singular_covariance() {
        // Eigendecomposition oracle: Σ = [[1,1],[1,1]] has eigenpair
        // (2, (1,1)/√2) and a null direction (1,−1)/√2.
        let mean = DVector::from_row_slice(&[1.0, 1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f =
            DegenerateFactor::from_gaussian(scope2(), &mean, &cov, RankTolerance::Auto).unwrap();
        assert_eq!(f.degeneracy(), 1);
        assert_abs_diff_eq!(f.lambda()[0], 0.5, epsilon = 1e-12);
        let e = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(f.q()[(0, 0)], e, epsilon = 1e-10);
        assert_abs_diff_eq!(f.q()[(1, 0)], e, epsilon = 1e-10);
        assert_abs_diff_eq!(f.r()[(0, 0)].abs(), e, epsilon = 1e-10);
        assert_abs_diff_eq!(f.c()[0], 0.0, epsilon = 1e-10);

        let m = f.moments().unwrap();
        assert!((m.mean - mean).norm() < 1e-8);
        assert!((m.covariance - cov).abs().max() < 1e-8);
        assert_eq!(m.rank, 1);
    }

    #[test]
    fn from_gaussian_zero_variance_is_dirac() {
        let f = DegenerateFactor::from_gaussian(
            Scope::single("x", 1),
            &DVector::from_element(1, 5.0),
            &DMatrix::zeros(1, 1),
            RankTolerance::Auto,
        )
        .unwrap();
        assert_eq!(f.degeneracy(), 1);
        assert_abs_diff_eq!(f.c()[0].abs(), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.g(), 0.0, epsilon = 1e-12);
        let m = f.moments().unwrap();
        assert_abs_diff_eq!(m.mean[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.covariance[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn from_gaussian_rejects_asymmetric() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(DegenerateFactor::from_gaussian(
            scope2(),
            &DVector::zeros(2),
            &cov,
            RankTolerance::Auto
        )
        .is_err());
    }

    #[test]
    fn moments_roundtrip_random_shapes() {
        let mean = DVector::from_row_slice(&[0.4, -1.3, 2.0]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.3, 0.8, 0.0, 1.4]);
        let cov = &a * a.transpose(); // rank 2 in R^3
        let f = DegenerateFactor::from_gaussian(
            Scope::new(vec![("x", 3)]).unwrap(),
            &mean,
            &cov,
            RankTolerance::Auto,
        )
        .unwrap();
        assert_eq!(f.degeneracy(), 1);
        let m = f.moments().unwrap();
        assert!((m.mean - mean).norm() < 1e-8);
        assert!((m.covariance - cov).abs().max() < 1e-8);
    }

    #[test]
    fn normalise_scalar_oracle() {
        // Λ = 2, h = 2: g = −½·(4/2) − ½ log(2π/2) = −1 − ½ log π.
        let f = DegenerateFactor::new(
            Scope::single("x", 1),
            OrthonormalBasis::full(1),
            OrthonormalBasis::empty(1),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 2.0),
            DVector::zeros(0),
            0.0,
        )
        .unwrap();
        let n = f.normalise().unwrap();
        assert_abs_diff_eq!(
            n.g(),
            -1.0 - 0.5 * std::f64::consts::PI.ln(),
            epsilon = 1e-12
        );
        let again = n.normalise().unwrap();
        assert_abs_diff_eq!(again.g(), n.g(), epsilon = 1e-15);
    }

    #[test]
    fn normalise_rejects_zero_precision() {
        let f = DegenerateFactor::vacuous(scope2());
        assert!(matches!(
            f.normalise(),
            Err(FactorError::NotNormalisable)
        ));
        assert!(matches!(f.moments(), Err(FactorError::NotNormalisable)));
    }

    #[test]
    fn log_density_standard_normal() {
        let f = DegenerateFactor::from_gaussian(
            Scope::single("x", 1),
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
            RankTolerance::Auto,
        )
        .unwrap();
        let v = f
            .log_density(&DVector::zeros(1), RankTolerance::Auto)
            .unwrap();
        assert_abs_diff_eq!(v.value().unwrap(), -0.5 * LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn log_density_off_manifold() {
        let f =
            DegenerateFactor::dirac(Scope::single("x", 1), DVector::from_element(1, 2.0)).unwrap();
        let v = f
            .log_density(&DVector::from_element(1, 2.5), RankTolerance::Auto)
            .unwrap();
        assert_eq!(v, LogDensity::OffManifold);
        let on = f
            .log_density(&DVector::from_element(1, 2.0), RankTolerance::Auto)
            .unwrap();
        assert_abs_diff_eq!(on.value().unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_density_on_manifold_matches_reduced_canonical() {
        // k = 1 factor in R^2; on the support, the value equals the 1-D
        // canonical factor evaluated at ε = Qᵀx.
        let mean = DVector::from_row_slice(&[1.0, 1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]);
        let f =
            DegenerateFactor::from_gaussian(scope2(), &mean, &cov, RankTolerance::Auto).unwrap();
        let x = DVector::from_row_slice(&[1.5, 1.5]); // stays on x1 = x2
        let v = f.log_density(&x, RankTolerance::Auto).unwrap().value().unwrap();
        let eps = f.q().transpose() * &x;
        let expect = -0.5 * f.lambda()[0] * eps[0] * eps[0] + f.h()[0] * eps[0] + f.g();
        assert_abs_diff_eq!(v, expect, epsilon = 1e-12);
    }

    #[test]
    fn dense_limit_matches_direct_conversion_when_nondegenerate() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.9]);
        let mean = DVector::from_row_slice(&[0.3, -0.4]);
        let f =
            DegenerateFactor::from_gaussian(scope2(), &mean, &cov, RankTolerance::Auto).unwrap();
        let c1 = f.dense_limit(1e-4).unwrap();
        let c2 = f.dense_limit(1e-8).unwrap();
        // k = 0: the proxy must not depend on a.
        assert!((c1.precision() - c2.precision()).abs().max() < 1e-9);
        let (m, s) = c1.moments().unwrap();
        assert!((m - mean).norm() < 1e-9);
        assert!((s - cov).abs().max() < 1e-9);
    }

    #[test]
    fn dense_limit_of_dirac_is_narrow_gaussian() {
        let f =
            DegenerateFactor::dirac(Scope::single("x", 1), DVector::from_element(1, 3.0)).unwrap();
        let c = f.dense_limit(1e-8).unwrap();
        let (m, s) = c.moments().unwrap();
        assert_abs_diff_eq!(m[0], 3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s[(0, 0)], 1e-8, epsilon = 1e-14);
    }

    #[test]
    fn serde_roundtrip_is_exact() {
        let mean = DVector::from_row_slice(&[0.12345678901234567, -1.0 / 3.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f =
            DegenerateFactor::from_gaussian(scope2(), &mean, &cov, RankTolerance::Auto).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        let back: DegenerateFactor = serde_json::from_str(&json).unwrap();
        assert_eq!(f, back);
    }
}
