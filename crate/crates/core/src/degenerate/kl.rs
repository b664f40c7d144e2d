//! Kullback–Leibler divergence between degenerate Gaussian densities.

use super::DegenerateFactor;
use crate::error::{FactorError, FactorResult};
use crate::tolerance::support_tol;

impl DegenerateFactor {
    /// `D_KL(self ‖ other)` for two normalised densities.
    ///
    /// Finite only when both densities share the same support manifold
    /// (`C(R₁) = C(R₂)` with matching offsets `R₁c₁ = R₂c₂`); otherwise
    /// returns `f64::INFINITY` exactly.
    pub fn kl_divergence(&self, other: &Self) -> FactorResult<f64> {
        if self.scope != other.scope {
            return Err(FactorError::ScopeMismatch {
                context: "kl_divergence",
            });
        }
        for f in [self, other] {
            if !f.is_normalisable() {
                return Err(FactorError::Unnormalised);
            }
            let expected = f.normalising_g_inner();
            if (f.g - expected).abs() > 1e-8 * (1.0 + expected.abs()) {
                return Err(FactorError::Unnormalised);
            }
        }

        let n = self.dim();
        let k = self.degeneracy();
        let tol = support_tol(n);
        if k != other.degeneracy() {
            return Ok(f64::INFINITY);
        }
        if k > 0 {
            let proj_diff = (self.r() * self.r().transpose()
                - other.r() * other.r().transpose())
            .norm();
            if proj_diff > tol {
                return Ok(f64::INFINITY);
            }
            let off1 = self.r() * self.c();
            let off2 = other.r() * other.c();
            if (&off1 - &off2).norm() > tol * (1.0 + off1.norm()) {
                return Ok(f64::INFINITY);
            }
        }

        // Closed form over the shared support, in terms of
        // M = √Λ₂ Q₂ᵀ Q₁ (quadratic pieces) and u = Λ₁⁻¹ h₁.
        let q2tq1 = other.q().transpose() * self.q();
        let m = self.q.ncols();
        let u = self.lambda.zip_map(&self.h, |l, h| h / l);
        let q1u = self.q() * &u;

        let mut trace_term = 0.0;
        let mut quad_term = 0.0;
        for i in 0..other.lambda.len() {
            let row = q2tq1.row(i);
            let mut row_tr = 0.0;
            for j in 0..m {
                row_tr += row[j] * row[j] / self.lambda[j];
            }
            trace_term += other.lambda[i] * row_tr;
            let proj: f64 = (0..m).map(|j| row[j] * u[j]).sum();
            quad_term += other.lambda[i] * proj * proj;
        }
        let t3 = self.h.dot(&u);
        let t4 = q1u.dot(&(other.q() * &other.h));

        Ok(0.5 * (trace_term + quad_term + t3 - m as f64) - t4 + self.g - other.g)
    }
}
