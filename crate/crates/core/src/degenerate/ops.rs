//! Statistical operations on degenerate factors: affine transforms,
//! marginalisation, multiplication, division, reduction and the scope
//! bookkeeping (extension and rearrangement) they rely on.

use nalgebra::{DMatrix, DVector};

use super::{cov_to_precision_basis, DegenerateFactor};
use crate::canonical::symmetrise;
use crate::error::{FactorError, FactorResult};
use crate::gmode;
use crate::scope::Scope;
use crate::subspace::{
    check_finite, check_finite_vec, column_space_scaled, null_space_scaled, pseudo_inverse,
    sym_eigen_desc, OrthonormalBasis,
};
use crate::tolerance::{support_tol, RankTolerance, CONSISTENCY_REL, SUBSPACE_RANK_REL};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Least-squares solve of `m x = rhs` through the normal equations,
/// returning the solution and the residual norm. An empty system returns an
/// empty solution with the full right-hand side as residual.
fn gram_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, f64) {
    let v = m.ncols();
    if v == 0 {
        return (DVector::zeros(0), rhs.norm());
    }
    let gram = m.transpose() * m;
    let (vecs, vals) = sym_eigen_desc(&gram);
    let mut y = vecs.transpose() * (m.transpose() * rhs);
    for i in 0..v {
        // The callers guarantee full column rank; guard division anyway.
        y[i] /= vals[i].max(f64::EPSILON * vals[0].max(1.0));
    }
    let sol = vecs * y;
    let resid = (m * &sol - rhs).norm();
    (sol, resid)
}

/// `log det(mᵀm)`; the empty-product convention gives 0 for zero columns.
fn logdet_gram(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let (_, vals) = sym_eigen_desc(&gram);
    vals.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).sum()
}

/// Eigendecomposition of a mathematically PSD matrix; rounding may produce
/// tiny negative eigenvalues, which are clamped to zero.
fn psd_eigen(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (vecs, vals) = sym_eigen_desc(m);
    (vecs, vals.map(|v| v.max(0.0)))
}

impl DegenerateFactor {
    /// Appends `new_vars` to the scope; the factor neither constrains nor
    /// weights the new variables.
    pub fn extend_scope(&self, new_vars: &Scope) -> FactorResult<Self> {
        if new_vars.is_empty() {
            return Ok(self.clone());
        }
        let scope = self.scope.extend(new_vars)?;
        let n = self.dim();
        let m = new_vars.dim();
        let nq = self.q.ncols();
        let mut q = DMatrix::zeros(n + m, nq + m);
        q.view_mut((0, 0), (n, nq)).copy_from(&self.q);
        q.view_mut((n, nq), (m, m)).copy_from(&DMatrix::identity(m, m));
        let mut r = DMatrix::zeros(n + m, self.r.ncols());
        r.view_mut((0, 0), (n, self.r.ncols())).copy_from(&self.r);
        let mut lambda = DVector::zeros(nq + m);
        lambda.rows_mut(0, nq).copy_from(&self.lambda);
        let mut h = DVector::zeros(nq + m);
        h.rows_mut(0, nq).copy_from(&self.h);
        Ok(Self::from_parts(scope, q, r, lambda, h, self.c.clone(), self.g))
    }

    /// Reorders the scope variables, permuting the rows of `Q` and `R`.
    pub fn rearrange_scope(&self, order: &[&str]) -> FactorResult<Self> {
        if !self.scope.is_permutation(order) {
            return Err(FactorError::NotAPermutation);
        }
        let idx = self.scope.indices_of(order)?;
        let scope = self.scope.select(order)?;
        let mut q = DMatrix::zeros(self.q.nrows(), self.q.ncols());
        let mut r = DMatrix::zeros(self.r.nrows(), self.r.ncols());
        for (new_i, &old_i) in idx.iter().enumerate() {
            for j in 0..q.ncols() {
                q[(new_i, j)] = self.q[(old_i, j)];
            }
            for j in 0..r.ncols() {
                r[(new_i, j)] = self.r[(old_i, j)];
            }
        }
        Ok(Self::from_parts(
            scope,
            q,
            r,
            self.lambda.clone(),
            self.h.clone(),
            self.c.clone(),
            self.g,
        ))
    }

    /// Extends both operands to the union scope (left operand's order first)
    /// and aligns them.
    fn aligned_with(&self, other: &Self) -> FactorResult<(Self, Self)> {
        if self.scope == other.scope {
            return Ok((self.clone(), other.clone()));
        }
        let union = self.scope.union(&other.scope)?;
        let order: Vec<&str> = union.names().collect();
        let missing_a = union.select(&self.scope_missing(&union))?;
        let missing_b = union.select(&other.scope_missing(&union))?;
        let a = self.extend_scope(&missing_a)?.rearrange_scope(&order)?;
        let b = other.extend_scope(&missing_b)?.rearrange_scope(&order)?;
        Ok((a, b))
    }

    fn scope_missing<'a>(&self, union: &'a Scope) -> Vec<&'a str> {
        union
            .names()
            .filter(|n| !self.scope.contains(n))
            .collect()
    }

    /// Density of `y = Ax + b` when `x` follows this (normalisable) factor.
    /// `A` may have any shape and rank.
    pub fn affine_transform(
        &self,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        out_scope: Scope,
    ) -> FactorResult<Self> {
        check_finite(a, "affine_transform A")?;
        check_finite_vec(b, "affine_transform b")?;
        if a.ncols() != self.dim() {
            return Err(FactorError::DimensionMismatch {
                context: "affine_transform input dim",
                expected: self.dim(),
                got: a.ncols(),
            });
        }
        if a.nrows() != out_scope.dim() || b.len() != out_scope.dim() {
            return Err(FactorError::DimensionMismatch {
                context: "affine_transform output dim",
                expected: out_scope.dim(),
                got: a.nrows(),
            });
        }
        if !self.is_normalisable() {
            return Err(FactorError::NotNormalisable);
        }
        let moments = self.moments()?;
        let cov_y = symmetrise(&(a * &moments.covariance * a.transpose()));
        let (q, lambda, r) = cov_to_precision_basis(&cov_y, RankTolerance::Auto, 0.0)?;
        let mu = a * &moments.mean + b;
        let c = r.matrix().transpose() * &mu;
        let h = DVector::from_iterator(
            lambda.len(),
            (0..lambda.len()).map(|i| lambda[i] * q.column(i).dot(&mu)),
        );
        let mut f = Self::from_parts(out_scope, q, r.into_matrix(), lambda, h, c, 0.0);
        f.g = gmode::g_value(|| f.normalising_g_inner());
        Ok(f)
    }

    /// Integrates out `out_vars`.
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
        let arranged = self.rearrange_scope(&order)?;
        let nx: usize = keep
            .iter()
            .map(|v| self.scope.dim_of(v).expect("kept var"))
            .sum();
        arranged.marginalise_trailing(nx, &self.scope.select(&keep)?)
    }

    /// Marginalises the trailing `n − nx` rows of an already-arranged factor.
    fn marginalise_trailing(&self, nx: usize, kept_scope: &Scope) -> FactorResult<Self> {
        let n = self.dim();
        let ny = n - nx;
        let m = self.q.ncols();

        let qx = self.q.rows(0, nx).into_owned();
        let qy = self.q.rows(nx, ny).into_owned();
        let rx = self.r.rows(0, nx).into_owned();
        let ry = self.r.rows(nx, ny).into_owned();

        let block_tol = RankTolerance::Relative(SUBSPACE_RANK_REL);
        let u = column_space_scaled(&qx, block_tol, 1.0)?;
        let v = null_space_scaled(&qx, block_tol, 1.0)?;
        let w = column_space_scaled(&(rx.transpose() * &qx), block_tol, 1.0)?;

        let r_new = u.complement();
        let c_new = r_new.matrix().transpose() * (&rx * &self.c);

        // Integrability: the precision over the directions that vanish from
        // the kept block must be positive definite.
        let vtlv = v.matrix().transpose() * DMatrix::from_diagonal(&self.lambda) * v.matrix();
        let nv = v.rank();
        let (vt_vecs, vt_vals) = sym_eigen_desc(&vtlv);
        if nv > 0 {
            let vmax = vt_vals[0].max(0.0);
            let cutoff = RankTolerance::Auto.cutoff(nv, nv, vmax.max(1.0));
            if vt_vals[nv - 1] <= cutoff {
                return Err(FactorError::DivergentIntegral);
            }
        }

        let ryw = &ry * w.matrix();
        let f = (w.matrix() * pseudo_inverse(&ryw, block_tol)? * &qy).transpose();
        let g_mat = (qx.transpose() - &f * rx.transpose()) * u.matrix();

        // S = V (VᵀΛV)⁻¹ Vᵀ.
        let s = if nv == 0 {
            DMatrix::zeros(m, m)
        } else {
            let mut inv = DMatrix::zeros(nv, nv);
            for j in 0..nv {
                let col = vt_vecs.column(j);
                inv += col * col.transpose() / vt_vals[j];
            }
            v.matrix() * inv * v.matrix().transpose()
        };

        let lambda_mat = DMatrix::from_diagonal(&self.lambda);
        let core = symmetrise(&(&lambda_mat - &lambda_mat * &s * &lambda_mat));
        let (z, lambda_new) = psd_eigen(&(g_mat.transpose() * &core * &g_mat));
        let q_new = u.matrix() * &z;

        let fc = &f * &self.c;
        let lam_fc = self.lambda.component_mul(&fc);
        let h_shift = &self.h - &lam_fc;
        let h_new = z.transpose() * g_mat.transpose() * (&h_shift - &lambda_mat * (&s * &h_shift));

        let g_new = gmode::g_value(|| {
            let logdet_vtlv: f64 = vt_vals.iter().take(nv).map(|v| v.ln()).sum();
            self.g
                + (&self.h - 0.5 * &lam_fc).dot(&fc)
                + 0.5 * h_shift.dot(&(&s * &h_shift))
                + 0.5 * (nv as f64 * LN_2PI - logdet_vtlv - logdet_gram(&ryw))
        });

        Ok(Self::from_parts(
            kept_scope.clone(),
            q_new,
            r_new.into_matrix(),
            lambda_new,
            h_new,
            c_new,
            g_new,
        ))
    }

    /// Product of two degenerate factors; scopes are aligned automatically.
    ///
    /// Returns [`FactorError::ZeroFactor`] when the operands' hard
    /// constraints have no common solution.
    pub fn multiply(&self, other: &Self) -> FactorResult<Self> {
        let (a, b) = self.aligned_with(other)?;
        let n = a.dim();

        let v = column_space_scaled(
            &(&a.q * (a.q.transpose() * &b.r)),
            RankTolerance::Relative(SUBSPACE_RANK_REL),
            1.0,
        )?;
        let rhs = &b.c - b.r.transpose() * (&a.r * &a.c);
        let r2tv = b.r.transpose() * v.matrix();
        let (bvec, residual) = gram_solve(&r2tv, &rhs);
        if residual > CONSISTENCY_REL * (1.0 + rhs.norm()) {
            return Err(FactorError::ZeroFactor { residual });
        }

        let k1 = a.r.ncols();
        let nv = v.rank();
        let mut r_new = DMatrix::zeros(n, k1 + nv);
        r_new.view_mut((0, 0), (n, k1)).copy_from(&a.r);
        r_new.view_mut((0, k1), (n, nv)).copy_from(v.matrix());
        let mut c_new = DVector::zeros(k1 + nv);
        c_new.rows_mut(0, k1).copy_from(&a.c);
        c_new.rows_mut(k1, nv).copy_from(&bvec);

        let u = OrthonormalBasis::new_unchecked(r_new.clone()).complement();

        let prec = symmetrise(
            &(&a.q * DMatrix::from_diagonal(&a.lambda) * a.q.transpose()
                + &b.q * DMatrix::from_diagonal(&b.lambda) * b.q.transpose()),
        );
        let (z, lambda_new) = psd_eigen(&(u.matrix().transpose() * &prec * u.matrix()));
        let q_new = u.matrix() * &z;

        let v_b = v.matrix() * &bvec;
        let rc_new = &r_new * &c_new;
        let q1t_vb = a.q.transpose() * &v_b;
        let q2t_rc = b.q.transpose() * &rc_new;
        let h1_shift = &a.h - &a.lambda.component_mul(&q1t_vb);
        let h2_shift = &b.h - &b.lambda.component_mul(&q2t_rc);
        let h_new = q_new.transpose() * (&a.q * &h1_shift + &b.q * &h2_shift);

        let g_new = gmode::g_value(|| {
            a.g + b.g
                + (&a.h - 0.5 * &a.lambda.component_mul(&q1t_vb)).dot(&q1t_vb)
                + (&b.h - 0.5 * &b.lambda.component_mul(&q2t_rc)).dot(&q2t_rc)
                - 0.5 * logdet_gram(&r2tv)
        });

        Ok(Self::from_parts(
            a.scope.clone(),
            q_new,
            r_new,
            lambda_new,
            h_new,
            c_new,
            g_new,
        ))
    }

    /// Quotient of two degenerate factors; requires the denominator support
    /// to contain the numerator support (`C(R₂) ⊆ C(R₁)`, matching offsets)
    /// and a positive semi-definite resulting precision.
    pub fn divide(&self, other: &Self) -> FactorResult<Self> {
        let (a, b) = self.aligned_with(other)?;
        let n = a.dim();
        let tol = support_tol(n);

        // C(R₂) ⊆ C(R₁) ⇔ (I − R₁R₁ᵀ)R₂ = 0.
        if b.r.ncols() > 0 {
            let proj_resid = (&b.r - &a.r * (a.r.transpose() * &b.r)).norm();
            if proj_resid > tol * (1.0 + (b.r.ncols() as f64).sqrt()) {
                return Err(FactorError::SupportViolation {
                    detail: "denominator support not contained in numerator support",
                });
            }
            let c_resid = (&b.c - b.r.transpose() * (&a.r * &a.c)).norm();
            if c_resid > tol * (1.0 + a.c.norm()) {
                return Err(FactorError::SupportViolation {
                    detail: "support offsets disagree",
                });
            }
        }

        let mut stacked = DMatrix::zeros(n, a.q.ncols() + b.r.ncols());
        stacked.view_mut((0, 0), (n, a.q.ncols())).copy_from(&a.q);
        stacked
            .view_mut((0, a.q.ncols()), (n, b.r.ncols()))
            .copy_from(&b.r);
        let r_new = OrthonormalBasis::new_unchecked(stacked).complement();
        let c_new = r_new.matrix().transpose() * (&a.r * &a.c);

        let q1tq2 = a.q.transpose() * &b.q;
        let diff = symmetrise(
            &(DMatrix::from_diagonal(&a.lambda)
                - &q1tq2 * DMatrix::from_diagonal(&b.lambda) * q1tq2.transpose()),
        );
        let (z, mut lambda_plus) = sym_eigen_desc(&diff);
        let scale = lambda_plus
            .iter()
            .map(|v| v.abs())
            .fold(1.0f64, f64::max);
        for i in 0..lambda_plus.len() {
            if lambda_plus[i] < 0.0 {
                if lambda_plus[i] < -1e-12 * scale {
                    return Err(FactorError::IndefiniteQuotient {
                        eigenvalue: lambda_plus[i],
                    });
                }
                lambda_plus[i] = 0.0;
            }
        }

        let m1 = a.q.ncols();
        let k2 = b.r.ncols();
        let mut q_new = DMatrix::zeros(n, m1 + k2);
        q_new.view_mut((0, 0), (n, m1)).copy_from(&(&a.q * &z));
        q_new.view_mut((0, m1), (n, k2)).copy_from(&b.r);
        let mut lambda_new = DVector::zeros(m1 + k2);
        lambda_new.rows_mut(0, m1).copy_from(&lambda_plus);

        let r1c1 = &a.r * &a.c;
        let q2t_r1c1 = b.q.transpose() * &r1c1;
        let h2_shift = &b.h - &b.lambda.component_mul(&q2t_r1c1);
        let h_new = q_new.transpose() * (&a.q * &a.h - &b.q * &h2_shift);

        let g_new = gmode::g_value(|| {
            a.g - b.g - (&b.h - 0.5 * &b.lambda.component_mul(&q2t_r1c1)).dot(&q2t_r1c1)
        });

        Ok(Self::from_parts(
            a.scope.clone(),
            q_new,
            r_new.into_matrix(),
            lambda_new,
            h_new,
            c_new,
            g_new,
        ))
    }

    /// Conditions the factor on evidence for a subset of its variables.
    ///
    /// Returns [`FactorError::ZeroFactor`] when the evidence contradicts a
    /// hard constraint.
    pub fn reduce(&self, evidence: &[(&str, DVector<f64>)]) -> FactorResult<Self> {
        if evidence.is_empty() {
            return Ok(self.clone());
        }
        let mut y_parts = Vec::new();
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
            check_finite_vec(value, "evidence value")?;
            y_parts.push(value.clone());
        }
        let out_names: Vec<&str> = evidence.iter().map(|(n, _)| *n).collect();
        let out_scope = self.scope.select(&out_names)?;
        let keep: Vec<&str> = self.scope.difference(&out_scope);
        let order: Vec<&str> = keep.iter().cloned().chain(out_names.iter().cloned()).collect();
        let arranged = self.rearrange_scope(&order)?;
        let nx: usize = keep
            .iter()
            .map(|v| self.scope.dim_of(v).expect("kept var"))
            .sum();
        let ny = self.dim() - nx;
        let mut y0 = DVector::zeros(ny);
        let mut off = 0;
        for part in &y_parts {
            y0.rows_mut(off, part.len()).copy_from(part);
            off += part.len();
        }
        arranged.reduce_trailing(nx, &y0, &self.scope.select(&keep)?)
    }

    /// Reduces the trailing block of an already-arranged factor at `y0`.
    fn reduce_trailing(&self, nx: usize, y0: &DVector<f64>, kept_scope: &Scope) -> FactorResult<Self> {
        let n = self.dim();
        let ny = n - nx;

        let qx = self.q.rows(0, nx).into_owned();
        let qy = self.q.rows(nx, ny).into_owned();
        let rx = self.r.rows(0, nx).into_owned();
        let ry = self.r.rows(nx, ny).into_owned();

        let r_new = column_space_scaled(&rx, RankTolerance::Relative(SUBSPACE_RANK_REL), 1.0)?;
        let rhs = &self.c - ry.transpose() * y0;
        let rxt_rn = rx.transpose() * r_new.matrix();
        let (c_new, residual) = gram_solve(&rxt_rn, &rhs);
        if residual > CONSISTENCY_REL * (1.0 + rhs.norm()) {
            return Err(FactorError::ZeroFactor { residual });
        }

        let ux = r_new.complement();
        let lambda_mat = DMatrix::from_diagonal(&self.lambda);
        // (UᵀQx)Λ(QxᵀU), computed without forming the n×n precision.
        let uq = ux.matrix().transpose() * &qx;
        let core = symmetrise(&(&uq * &lambda_mat * uq.transpose()));
        let (z, lambda_new) = psd_eigen(&core);
        let q_new = ux.matrix() * &z;

        // t = Qᵀ [R'c'; y0].
        let anchor_x = r_new.matrix() * &c_new;
        let t = qx.transpose() * &anchor_x + qy.transpose() * y0;
        let lam_t = self.lambda.component_mul(&t);
        let h_new = z.transpose() * (&uq * (&self.h - &lam_t));

        let g_new = gmode::g_value(|| {
            self.g + (&self.h - 0.5 * &lam_t).dot(&t) - 0.5 * logdet_gram(&rxt_rn)
        });

        Ok(Self::from_parts(
            kept_scope.clone(),
            q_new,
            r_new.into_matrix(),
            lambda_new,
            h_new,
            c_new,
            g_new,
        ))
    }
}
