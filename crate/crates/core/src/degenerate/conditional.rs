//! Conditional-density construction: exact linear conditionals
//! `p(y | x)` for `y = Ax + b + w`, and unscented moment-matching that turns
//! a nonlinear map into an equivalent affine transform with residual noise.

use nalgebra::{DMatrix, DVector};

use super::{cov_to_precision_basis_clamped, DegenerateFactor};
use crate::canonical::symmetrise;
use crate::error::{FactorError, FactorResult};
use crate::gmode;
use crate::scope::Scope;
use crate::subspace::{
    check_finite, check_finite_vec, column_space_scaled, pseudo_inverse, solve_spd,
    sym_eigen_desc, OrthonormalBasis,
};
use crate::tolerance::{RankTolerance, SUBSPACE_RANK_REL};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Represents the conditional density of `y = Ax + b + w` as a degenerate
/// factor over the stacked scope `(x, y)`.
///
/// `noise` is the (normalisable, possibly degenerate) distribution of `w`
/// over `dim(y)`; conditioning directions get infinite variance through the
/// zero-precision block of the result.
pub fn represent_conditional(
    noise: &DegenerateFactor,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x_scope: &Scope,
    y_scope: &Scope,
) -> FactorResult<DegenerateFactor> {
    check_finite(a, "represent_conditional A")?;
    check_finite_vec(b, "represent_conditional b")?;
    let nx = x_scope.dim();
    let ny = y_scope.dim();
    if noise.dim() != ny || a.nrows() != ny || a.ncols() != nx || b.len() != ny {
        return Err(FactorError::DimensionMismatch {
            context: "represent_conditional shapes",
            expected: ny,
            got: noise.dim(),
        });
    }
    if !noise.is_normalisable() {
        return Err(FactorError::NotNormalisable);
    }
    let n = nx + ny;
    let scope = x_scope.extend(y_scope)?;

    // F = [−A I].
    let mut f = DMatrix::zeros(ny, n);
    f.view_mut((0, 0), (ny, nx)).copy_from(&(-a));
    f.view_mut((0, nx), (ny, ny))
        .copy_from(&DMatrix::identity(ny, ny));

    let k = noise.r.ncols();
    let r_new = column_space_scaled(
        &(f.transpose() * &noise.r),
        RankTolerance::Relative(SUBSPACE_RANK_REL),
        1.0,
    )?;
    debug_assert_eq!(r_new.rank(), k, "FᵀR must keep full column rank");

    // Z = R'ᵀFᵀR (Rᵀ(I + AAᵀ)R)⁻¹ and c' = Z(c + Rᵀb).
    let gram = symmetrise(
        &(noise.r.transpose() * &noise.r
            + (a.transpose() * &noise.r).transpose() * (a.transpose() * &noise.r)),
    );
    let rhs = &noise.c + noise.r.transpose() * b;
    let z_mat = if k == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let base = r_new.matrix().transpose() * f.transpose() * &noise.r;
        let mut cols = DMatrix::zeros(k, k);
        for j in 0..k {
            let col = solve_spd(&gram, &base.row(j).transpose(), "represent_conditional Z")?;
            cols.set_row(j, &col.transpose());
        }
        cols
    };
    let c_new = &z_mat * &rhs;

    // Projected precision P FᵀQΛQᵀF P, diagonalised compactly.
    let ftq = f.transpose() * &noise.q;
    let proj = DMatrix::identity(n, n) - r_new.projector();
    let pftq = &proj * &ftq;
    let s_mat = symmetrise(&(&pftq * DMatrix::from_diagonal(&noise.lambda) * pftq.transpose()));
    let (vecs, vals) = sym_eigen_desc(&s_mat);
    let vmax = vals.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = RankTolerance::Relative(1e-12).cutoff(n, n, vmax);
    let rank = vals.iter().filter(|&&v| v > cutoff).count();
    debug_assert_eq!(rank, ny - k, "projected precision rank");
    let q_plus = vecs.columns(0, rank).into_owned();
    let lambda_plus = DVector::from_iterator(rank, vals.iter().take(rank).cloned());

    let mut stacked = DMatrix::zeros(n, rank + k);
    stacked.view_mut((0, 0), (n, rank)).copy_from(&q_plus);
    stacked.view_mut((0, rank), (n, k)).copy_from(r_new.matrix());
    let q_inf = OrthonormalBasis::new_unchecked(stacked).complement();

    let mut q_new = DMatrix::zeros(n, rank + q_inf.rank());
    q_new.view_mut((0, 0), (n, rank)).copy_from(&q_plus);
    q_new
        .view_mut((0, rank), (n, q_inf.rank()))
        .copy_from(q_inf.matrix());
    let mut lambda_new = DVector::zeros(rank + q_inf.rank());
    lambda_new.rows_mut(0, rank).copy_from(&lambda_plus);

    // Shifted linear term: h' = Q'ᵀFᵀQ (h + ΛQᵀ(b − FR'c')).
    let fr_c = &f * (r_new.matrix() * &c_new);
    let qt_b = noise.q.transpose() * b;
    let qt_frc = noise.q.transpose() * &fr_c;
    let shift = &noise.h + noise.lambda.component_mul(&(&qt_b - &qt_frc));
    let h_new = q_new.transpose() * (&ftq * &shift);

    let g_new = gmode::g_value(|| {
        let lam_qtb = noise.lambda.component_mul(&qt_b);
        let term_b = (&noise.h + 0.5 * &lam_qtb).dot(&qt_b);
        let shift_half = &noise.h + noise.lambda.component_mul(&(&qt_b - 0.5 * &qt_frc));
        let term_c = shift_half.dot(&qt_frc);
        let logdet_z = if k == 0 {
            0.0
        } else {
            z_mat.clone().lu().determinant().abs().max(f64::MIN_POSITIVE).ln()
        };
        noise.g - term_b + term_c + logdet_z
    });

    Ok(DegenerateFactor::from_parts(
        scope,
        q_new,
        r_new.into_matrix(),
        lambda_new,
        h_new,
        c_new,
        g_new,
    ))
}

/// Sigma-point parameters for the unscented transform.
///
/// With support dimension `d`, the scaling is `γ = √(d + λᵤ)` where
/// `λᵤ = α²(d + κ) − d`; the centre weights are `w_m⁰ = λᵤ/(d + λᵤ)` and
/// `w_c⁰ = w_m⁰ + 1 − α² + β`, all remaining weights `1/(2(d + λᵤ))`.
#[derive(Debug, Clone, Copy)]
pub struct UnscentedParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UnscentedParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UnscentedParams {
    /// `(γ, mean weights, covariance weights)` for `2d + 1` sigma points.
    pub fn weights(&self, d: usize) -> (f64, Vec<f64>, Vec<f64>) {
        if d == 0 {
            return (0.0, vec![1.0], vec![1.0]);
        }
        let df = d as f64;
        let lambda = self.alpha * self.alpha * (df + self.kappa) - df;
        let denom = df + lambda;
        assert!(denom > 0.0, "unscented parameters give non-positive d + λ");
        let gamma = denom.sqrt();
        let mut wm = vec![1.0 / (2.0 * denom); 2 * d + 1];
        let mut wc = wm.clone();
        wm[0] = lambda / denom;
        wc[0] = wm[0] + 1.0 - self.alpha * self.alpha + self.beta;
        (gamma, wm, wc)
    }
}

/// Moment-matched affine surrogate `y ≈ Ãx + b̃ + w̃` for `y = f(x, w)` under
/// a degenerate joint prior over `(x, w)`.
///
/// Sigma points are drawn only along the support directions `Q`, so singular
/// joint covariances need no special treatment. The returned noise factor is
/// zero-mean over `y_scope`.
pub fn equivalent_transformation<F>(
    prior: &DegenerateFactor,
    x_vars: &[&str],
    f: F,
    y_scope: &Scope,
    params: UnscentedParams,
) -> FactorResult<(DMatrix<f64>, DVector<f64>, DegenerateFactor)>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    for v in x_vars {
        if !prior.scope().contains(v) {
            return Err(FactorError::UnknownVariable((*v).to_string()));
        }
    }
    let x_scope = prior.scope().select(x_vars)?;
    let w_names: Vec<&str> = prior.scope().difference(&x_scope);
    let order: Vec<&str> = x_vars.iter().cloned().chain(w_names.iter().cloned()).collect();
    let prior = prior.rearrange_scope(&order)?;
    if !prior.is_normalisable() {
        return Err(FactorError::NotNormalisable);
    }

    let nx = x_scope.dim();
    let nw = prior.dim() - nx;
    let ny = y_scope.dim();
    let d = prior.q.ncols();
    let (gamma, wm, wc) = params.weights(d);

    let mean = {
        let inv = prior.lambda.zip_map(&prior.h, |l, h| h / l);
        &prior.q * inv + &prior.r * &prior.c
    };

    // Sigma points: the mean plus ±γ q_j / √λ_j along each support column.
    let mut points: Vec<DVector<f64>> = Vec::with_capacity(2 * d + 1);
    points.push(mean.clone());
    for j in 0..d {
        let step = prior.q.column(j) * (gamma / prior.lambda[j].sqrt());
        points.push(&mean + &step);
        points.push(&mean - &step);
    }

    // Propagate and stack to (x, y).
    let mut joints: Vec<DVector<f64>> = Vec::with_capacity(points.len());
    for p in &points {
        let x_part = p.rows(0, nx).into_owned();
        let w_part = p.rows(nx, nw).into_owned();
        let y = f(&x_part, &w_part);
        if y.len() != ny {
            return Err(FactorError::DimensionMismatch {
                context: "equivalent_transformation f output",
                expected: ny,
                got: y.len(),
            });
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(FactorError::Propagation);
        }
        let mut joint = DVector::zeros(nx + ny);
        joint.rows_mut(0, nx).copy_from(&x_part);
        joint.rows_mut(nx, ny).copy_from(&y);
        joints.push(joint);
    }

    let mut mu = DVector::zeros(nx + ny);
    for (i, joint) in joints.iter().enumerate() {
        mu += joint * wm[i];
    }
    let mut sigma = DMatrix::zeros(nx + ny, nx + ny);
    for (i, joint) in joints.iter().enumerate() {
        let dvec = joint - &mu;
        sigma += &dvec * dvec.transpose() * wc[i];
    }
    let sigma = symmetrise(&sigma);

    let sigma_xx = sigma.view((0, 0), (nx, nx)).into_owned();
    let sigma_xy = sigma.view((0, nx), (nx, ny)).into_owned();
    let sigma_yy = sigma.view((nx, nx), (ny, ny)).into_owned();
    let mu_x = mu.rows(0, nx).into_owned();
    let mu_y = mu.rows(nx, ny).into_owned();

    let a_tilde = sigma_xy.transpose() * pseudo_inverse(&sigma_xx, RankTolerance::Auto)?;
    let b_tilde = &mu_y - &a_tilde * &mu_x;
    let cov_w = symmetrise(&(&sigma_yy - &a_tilde * &sigma_xy));

    // The residual covariance is a difference of like-sized moments, so its
    // rank must be judged against the moment scale: anything below 1e-12 of
    // it is cancellation noise, not genuine variance. The negativity floor
    // is generous for the same reason; with a nearly singular input block
    // the cancellation error grows with its condition number.
    let scale = sigma_yy.diagonal().amax().max(sigma_xx.diagonal().amax());
    let (q, lambda, r) =
        cov_to_precision_basis_clamped(&cov_w, RankTolerance::Relative(1e-12), scale, 1e-5)?;
    let m = lambda.len();
    let mut noise = DegenerateFactor::from_parts(
        y_scope.clone(),
        q,
        r.into_matrix(),
        lambda,
        DVector::zeros(m),
        DVector::zeros(ny - m),
        0.0,
    );
    noise.g = gmode::g_value(|| {
        let logdet: f64 = noise.lambda.iter().map(|l| l.ln()).sum();
        -0.5 * (m as f64 * LN_2PI - logdet)
    });
    Ok((a_tilde, b_tilde, noise))
}
