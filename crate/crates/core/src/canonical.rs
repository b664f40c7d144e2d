//! Non-degenerate canonical Gaussian factors `exp(−½xᵀKx + hᵀx + g)` and
//! their closed-form operations.
//!
//! These are the classical information-form building blocks; the degenerate
//! module generalises them and the tests use this module as an oracle for the
//! `k = 0` paths.

use nalgebra::{DMatrix, DVector};

use crate::error::{FactorError, FactorResult};
use crate::scope::Scope;
use crate::subspace::{check_finite, check_finite_vec, SpdFactor};
use crate::tolerance::RankTolerance;

const LN_2PI: f64 = 1.837877066409345483560659472811; // ln(2π)

/// Canonical factor over a named scope.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFactor {
    scope: Scope,
    k: DMatrix<f64>,
    h: DVector<f64>,
    g: f64,
}

impl CanonicalFactor {
    /// Builds a factor, symmetrising the precision matrix.
    pub fn new(scope: Scope, k: DMatrix<f64>, h: DVector<f64>, g: f64) -> FactorResult<Self> {
        let n = scope.dim();
        check_finite(&k, "canonical precision")?;
        check_finite_vec(&h, "canonical h")?;
        if !g.is_finite() {
            return Err(FactorError::NonFinite {
                context: "canonical g",
            });
        }
        if k.nrows() != n || k.ncols() != n {
            return Err(FactorError::DimensionMismatch {
                context: "canonical precision shape",
                expected: n,
                got: k.nrows(),
            });
        }
        if h.len() != n {
            return Err(FactorError::DimensionMismatch {
                context: "canonical h length",
                expected: n,
                got: h.len(),
            });
        }
        let sym_err = (&k - k.transpose()).abs().max();
        if sym_err > 1e-10 * k.abs().max().max(1.0) {
            return Err(FactorError::NonFinite {
                context: "canonical precision is not symmetric",
            });
        }
        Ok(Self {
            scope,
            k: symmetrise(&k),
            h,
            g,
        })
    }

    /// The multiplicative identity over a scope: `K = 0, h = 0, g = 0`.
    pub fn vacuous(scope: Scope) -> Self {
        let n = scope.dim();
        Self {
            scope,
            k: DMatrix::zeros(n, n),
            h: DVector::zeros(n),
            g: 0.0,
        }
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn dim(&self) -> usize {
        self.scope.dim()
    }

    /// The `g` that makes `(K, h)` a normalised density:
    /// `−½hᵀK⁻¹h − ½log|2πK⁻¹|`. Requires positive-definite `K`.
    pub fn normalising_g(k: &DMatrix<f64>, h: &DVector<f64>) -> FactorResult<f64> {
        let n = k.nrows();
        let chol = SpdFactor::new(k, RankTolerance::Auto).ok_or(
            FactorError::NotPositiveDefinite {
                context: "normalising_g",
            },
        )?;
        let kinv_h = chol.solve_vec(h);
        Ok(-0.5 * h.dot(&kinv_h) - 0.5 * (n as f64 * LN_2PI - chol.logdet()))
    }

    /// Replaces `g` so the factor integrates to one.
    pub fn normalise(&self) -> FactorResult<Self> {
        let g = Self::normalising_g(&self.k, &self.h)?;
        Ok(Self {
            scope: self.scope.clone(),
            k: self.k.clone(),
            h: self.h.clone(),
            g,
        })
    }

    /// Mean and covariance; requires positive-definite `K`.
    pub fn moments(&self) -> FactorResult<(DVector<f64>, DMatrix<f64>)> {
        let chol = SpdFactor::new(&self.k, RankTolerance::Auto).ok_or(
            FactorError::NotPositiveDefinite {
                context: "canonical moments",
            },
        )?;
        let mean = chol.solve_vec(&self.h);
        Ok((mean, symmetrise(&chol.inverse())))
    }

    /// Log value of the factor at a point.
    pub fn log_value(&self, x: &DVector<f64>) -> FactorResult<f64> {
        if x.len() != self.dim() {
            return Err(FactorError::DimensionMismatch {
                context: "canonical log_value",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(-0.5 * x.dot(&(&self.k * x)) + self.h.dot(x) + self.g)
    }

    fn permuted(&self, order: &[&str]) -> FactorResult<(DMatrix<f64>, DVector<f64>, Scope)> {
        if !self.scope.is_permutation(order) && order.len() == self.scope.len() {
            return Err(FactorError::NotAPermutation);
        }
        let idx = self.scope.indices_of(order)?;
        let n = idx.len();
        let mut k = DMatrix::zeros(n, n);
        let mut h = DVector::zeros(n);
        for (i, &pi) in idx.iter().enumerate() {
            h[i] = self.h[pi];
            for (j, &pj) in idx.iter().enumerate() {
                k[(i, j)] = self.k[(pi, pj)];
            }
        }
        Ok((k, h, self.scope.select(order)?))
    }

    /// Integrates out `out_vars` (Schur complement on the remaining block).
    ///
    /// Marginalising the empty set returns the factor unchanged. A singular
    /// block over `out_vars` means the factor is degenerate there and the
    /// degenerate representation must be used instead.
    pub fn marginalise(&self, out_vars: &[&str]) -> FactorResult<Self> {
        if out_vars.is_empty() {
            return Ok(self.clone());
        }
        for v in out_vars {
            if !self.scope.contains(v) {
                return Err(FactorError::UnknownVariable((*v).to_string()));
            }
        }
        let out_scope = self.scope.select(out_vars)?;
        let keep: Vec<&str> = self.scope.difference(&out_scope);
        let order: Vec<&str> = keep.iter().cloned().chain(out_vars.iter().cloned()).collect();
        let (k, h, _) = self.permuted(&order)?;
        let nx: usize = keep
            .iter()
            .map(|v| self.scope.dim_of(v).expect("kept var"))
            .sum();
        let ny = self.dim() - nx;

        let kxx = k.view((0, 0), (nx, nx)).into_owned();
        let kxy = k.view((0, nx), (nx, ny)).into_owned();
        let kyy = k.view((nx, nx), (ny, ny)).into_owned();
        let hx = h.rows(0, nx).into_owned();
        let hy = h.rows(nx, ny).into_owned();

        let chol = SpdFactor::new(&kyy, RankTolerance::Auto)
            .ok_or(FactorError::DegeneracyDetected)?;
        let logdet_kyy = chol.logdet();

        // Substitution solves keep the Schur complement backward stable even
        // on strongly graded blocks.
        let w = chol.solve_mat(&kxy.transpose());
        let s = chol.solve_vec(&hy);
        let k_new = symmetrise(&(&kxx - &kxy * &w));
        let h_new = &hx - &kxy * &s;
        let g_new = self.g + 0.5 * hy.dot(&s) + 0.5 * (ny as f64 * LN_2PI - logdet_kyy);

        let scope = self.scope.select(&keep)?;
        Ok(Self {
            scope,
            k: k_new,
            h: h_new,
            g: g_new,
        })
    }

    /// Product of two factors over the same, aligned scope.
    pub fn multiply(&self, other: &Self) -> FactorResult<Self> {
        if self.scope != other.scope {
            return Err(FactorError::ScopeMismatch {
                context: "canonical multiply",
            });
        }
        Ok(Self {
            scope: self.scope.clone(),
            k: symmetrise(&(&self.k + &other.k)),
            h: &self.h + &other.h,
            g: self.g + other.g,
        })
    }

    /// Quotient of two factors over the same, aligned scope.
    pub fn divide(&self, other: &Self) -> FactorResult<Self> {
        if self.scope != other.scope {
            return Err(FactorError::ScopeMismatch {
                context: "canonical divide",
            });
        }
        Ok(Self {
            scope: self.scope.clone(),
            k: symmetrise(&(&self.k - &other.k)),
            h: &self.h - &other.h,
            g: self.g - other.g,
        })
    }

    /// Conditions on evidence `var = value` for each listed variable.
    pub fn reduce(&self, evidence: &[(&str, DVector<f64>)]) -> FactorResult<Self> {
        if evidence.is_empty() {
            return Ok(self.clone());
        }
        let mut y0_parts = Vec::new();
        for (name, value) in evidence {
            let dim = self
                .scope
                .dim_of(name)
                .ok_or_else(|| FactorError::UnknownVariable((*name).to_string()))?;
            if value.len() != dim {
                return Err(FactorError::DimensionMismatch {
                    context: "evidence value length",
                    expected: dim,
                    got: value.len(),
                });
            }
            y0_parts.push(value.clone());
        }
        let out_names: Vec<&str> = evidence.iter().map(|(n, _)| *n).collect();
        let out_scope = self.scope.select(&out_names)?;
        let keep: Vec<&str> = self.scope.difference(&out_scope);
        let order: Vec<&str> = keep.iter().cloned().chain(out_names.iter().cloned()).collect();
        let (k, h, _) = self.permuted(&order)?;
        let nx: usize = keep
            .iter()
            .map(|v| self.scope.dim_of(v).expect("kept var"))
            .sum();
        let ny = self.dim() - nx;

        let mut y0 = DVector::zeros(ny);
        let mut off = 0;
        for part in &y0_parts {
            y0.rows_mut(off, part.len()).copy_from(part);
            off += part.len();
        }

        let kxx = k.view((0, 0), (nx, nx)).into_owned();
        let kxy = k.view((0, nx), (nx, ny)).into_owned();
        let kyy = k.view((nx, nx), (ny, ny)).into_owned();
        let hx = h.rows(0, nx).into_owned();
        let hy = h.rows(nx, ny).into_owned();

        let h_new = &hx - &kxy * &y0;
        let g_new = self.g + hy.dot(&y0) - 0.5 * y0.dot(&(&kyy * &y0));

        Ok(Self {
            scope: self.scope.select(&keep)?,
            k: symmetrise(&kxx),
            h: h_new,
            g: g_new,
        })
    }

    /// Re-expresses a factor with scope `Ax + b` over scope `x`:
    /// `(AᵀKA, Aᵀ(h − Kb), g + (h − ½Kb)ᵀb)`.
    pub fn rescope_affine(
        &self,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        new_scope: Scope,
    ) -> FactorResult<Self> {
        check_finite(a, "rescope_affine A")?;
        check_finite_vec(b, "rescope_affine b")?;
        if a.nrows() != self.dim() || b.len() != self.dim() {
            return Err(FactorError::DimensionMismatch {
                context: "rescope_affine shape",
                expected: self.dim(),
                got: a.nrows(),
            });
        }
        if a.ncols() != new_scope.dim() {
            return Err(FactorError::DimensionMismatch {
                context: "rescope_affine target scope",
                expected: a.ncols(),
                got: new_scope.dim(),
            });
        }
        let kb = &self.k * b;
        let k_new = symmetrise(&(a.transpose() * &self.k * a));
        let h_new = a.transpose() * (&self.h - &kb);
        let g_new = self.g + (&self.h - 0.5 * &kb).dot(b);
        Ok(Self {
            scope: new_scope,
            k: k_new,
            h: h_new,
            g: g_new,
        })
    }

    /// Reorders the scope variables.
    pub fn rearrange_scope(&self, order: &[&str]) -> FactorResult<Self> {
        if !self.scope.is_permutation(order) {
            return Err(FactorError::NotAPermutation);
        }
        let (k, h, scope) = self.permuted(order)?;
        Ok(Self { scope, k, h, g: self.g })
    }
}

pub(crate) fn symmetrise(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scope_xy() -> Scope {
        Scope::new(vec![("x", 1), ("y", 1)]).unwrap()
    }

    fn factor(k: &[f64], h: &[f64], g: f64, scope: Scope) -> CanonicalFactor {
        let n = scope.dim();
        CanonicalFactor::new(
            scope,
            DMatrix::from_row_slice(n, n, k),
            DVector::from_row_slice(h),
            g,
        )
        .unwrap()
    }

    #[test]
    fn normalising_g_standard_normal() {
        let g = CanonicalFactor::normalising_g(
            &DMatrix::from_element(1, 1, 1.0),
            &DVector::zeros(1),
        )
        .unwrap();
        assert_abs_diff_eq!(g, -0.5 * LN_2PI, epsilon = 1e-12);

        let g2 = CanonicalFactor::normalising_g(&DMatrix::identity(2, 2), &DVector::zeros(2))
            .unwrap();
        assert_abs_diff_eq!(g2, -LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn normalising_g_scalar_oracle() {
        // K = 4, h = 2: −½·2·(1/4)·2 − ½ log(2π/4) = −0.5 − ½ log(π/2).
        let g = CanonicalFactor::normalising_g(
            &DMatrix::from_element(1, 1, 4.0),
            &DVector::from_element(1, 2.0),
        )
        .unwrap();
        assert_abs_diff_eq!(
            g,
            -0.5 - 0.5 * (std::f64::consts::PI / 2.0).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn normalising_g_rejects_indefinite() {
        let k = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(CanonicalFactor::normalising_g(&k, &DVector::zeros(1)).is_err());
    }

    #[test]
    fn marginalise_independent_blocks() {
        let phi = factor(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], -LN_2PI, scope_xy());
        let m = phi.marginalise(&["y"]).unwrap();
        assert_abs_diff_eq!(m.precision()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.g(), -0.5 * LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn marginalise_schur_oracle() {
        // Schur complement by hand: K' = 2 − 1·(1/2)·1 = 1.5.
        let phi = factor(&[2.0, 1.0, 1.0, 2.0], &[0.0, 0.0], 0.0, scope_xy());
        let m = phi.marginalise(&["y"]).unwrap();
        assert_abs_diff_eq!(m.precision()[(0, 0)], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.h()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.g(), 0.5 * (2.0 * std::f64::consts::PI / 2.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn marginalise_empty_set_is_identity() {
        let phi = factor(&[2.0, 1.0, 1.0, 2.0], &[0.5, -0.5], 0.3, scope_xy());
        let m = phi.marginalise(&[]).unwrap();
        assert_eq!(&m, &phi);
    }

    #[test]
    fn marginalise_singular_block_detected() {
        let phi = factor(&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0], 0.0, scope_xy());
        assert!(matches!(
            phi.marginalise(&["y"]),
            Err(FactorError::DegeneracyDetected)
        ));
    }

    #[test]
    fn multiply_divide_componentwise() {
        let s = Scope::single("x", 1);
        let a = factor(&[1.0], &[1.0], 0.2, s.clone());
        let b = factor(&[3.0], &[-1.0], -0.1, s.clone());
        let p = a.multiply(&b).unwrap();
        assert_abs_diff_eq!(p.precision()[(0, 0)], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.h()[0], 0.0, epsilon = 1e-15);
        let q = p.divide(&b).unwrap();
        assert_abs_diff_eq!(q.precision()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.h()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.g(), 0.2, epsilon = 1e-15);

        let vac = CanonicalFactor::vacuous(s);
        let same = a.multiply(&vac).unwrap();
        assert_eq!(&same, &a);
        let selfdiv = a.divide(&a).unwrap();
        assert_abs_diff_eq!(selfdiv.precision()[(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(selfdiv.g(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn reduce_plug_in_oracle() {
        // K = [[2,1],[1,2]], h = 0, y0 = 1: K' = 2, h' = −1, g' = g − 1.
        let phi = factor(&[2.0, 1.0, 1.0, 2.0], &[0.0, 0.0], 0.25, scope_xy());
        let r = phi.reduce(&[("y", DVector::from_element(1, 1.0))]).unwrap();
        assert_abs_diff_eq!(r.precision()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.h()[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.g(), 0.25 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reduce_zero_evidence_keeps_params() {
        let phi = factor(&[2.0, 1.0, 1.0, 2.0], &[0.5, -0.25], 0.1, scope_xy());
        let r = phi.reduce(&[("y", DVector::zeros(1))]).unwrap();
        assert_abs_diff_eq!(r.precision()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.h()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.g(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn rescope_affine_scalar_oracle() {
        // A = 2, b = 1, K = 1, h = 0, g = 0 → K' = 4, h' = −2, g' = −½.
        let phi = factor(&[1.0], &[0.0], 0.0, Scope::single("y", 1));
        let r = phi
            .rescope_affine(
                &DMatrix::from_element(1, 1, 2.0),
                &DVector::from_element(1, 1.0),
                Scope::single("x", 1),
            )
            .unwrap();
        assert_abs_diff_eq!(r.precision()[(0, 0)], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.h()[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.g(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn rescope_affine_orthogonal_composes_to_identity() {
        let s = Scope::new(vec![("x", 2)]).unwrap();
        let phi = factor(&[2.0, 0.5, 0.5, 1.0], &[0.3, -0.2], 0.1, s.clone());
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let a = DMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        let one = phi
            .rescope_affine(&a, &DVector::zeros(2), s.clone())
            .unwrap();
        let back = one
            .rescope_affine(&a.transpose(), &DVector::zeros(2), s)
            .unwrap();
        assert!((back.precision() - phi.precision()).abs().max() < 1e-10);
        assert!((back.h() - phi.h()).abs().max() < 1e-10);
        assert_abs_diff_eq!(back.g(), phi.g(), epsilon = 1e-10);
    }

    #[test]
    fn marginal_of_normalised_is_normalised() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.7, 0.7, 1.4]);
        let h = DVector::from_row_slice(&[0.4, -1.1]);
        let g = CanonicalFactor::normalising_g(&k, &h).unwrap();
        let phi = CanonicalFactor::new(scope_xy(), k, h, g).unwrap();
        let m = phi.marginalise(&["y"]).unwrap();
        let expect = CanonicalFactor::normalising_g(m.precision(), m.h()).unwrap();
        assert_abs_diff_eq!(m.g(), expect, epsilon = 1e-9);
    }

    #[test]
    fn reduce_and_marginalise_agree_on_independent_blocks() {
        let phi = factor(&[1.5, 0.0, 0.0, 2.5], &[0.2, 0.9], 0.0, scope_xy());
        let m = phi.marginalise(&["y"]).unwrap();
        let r = phi.reduce(&[("y", DVector::from_element(1, 0.7))]).unwrap();
        assert!((m.precision() - r.precision()).abs().max() < 1e-12);
        assert!((m.h() - r.h()).abs().max() < 1e-12);
    }
}
