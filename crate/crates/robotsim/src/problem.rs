//! Turns a simulation record plus a model hypothesis into the chain of
//! motion and measurement factors the inference engine consumes.
//!
//! Both model sides are linearised with the unscented transform around the
//! running rightward-message context; the prescribed noise (degenerate on
//! window steps, ridge-regularised or auxiliary-free for the baselines) is
//! then attached through the exact linear-conditional construction.

use degen_factors::{
    equivalent_transformation, represent_conditional, ClusterGraph, DegenerateFactor,
    RankTolerance, Scope, UnscentedParams,
};
use nalgebra::{DMatrix, DVector};

use crate::world::{SimulationRecord, WorldConfig};
use crate::SimError;

/// Estimation method under comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Exact degenerate factors for the noiseless auxiliary rows.
    Degenerate,
    /// Ridge regularisation: `λI` added to the singular noise covariance.
    Ridge(f64),
    /// Auxiliary rows dropped entirely (the object shape is ignored).
    NoAuxiliary,
}

/// A model hypothesis: which steps carry auxiliary rows and which values the
/// object geometry asserts for them.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub window: (usize, usize),
    pub aux_targets: DVector<f64>,
}

impl Hypothesis {
    /// The data-generating hypothesis.
    pub fn truth(config: &WorldConfig) -> Self {
        Self {
            window: config.window,
            aux_targets: config.object_geometry(),
        }
    }

    /// Same object, attachment shifted to pickup step `k` (window length
    /// preserved).
    pub fn pickup_at(config: &WorldConfig, k: usize) -> Self {
        let len = config.window.1 - config.window.0;
        Self {
            window: (k + 1, k + 1 + len),
            aux_targets: config.object_geometry(),
        }
    }

    /// Same window, object distances scaled by `a` (orientations are size
    /// independent).
    pub fn size_scaled(config: &WorldConfig, a: f64) -> Self {
        let mut t = config.object_geometry();
        for p in 0..t.len() / 2 {
            t[2 * p] *= a;
        }
        Self {
            window: config.window,
            aux_targets: t,
        }
    }

    fn in_window(&self, k: usize) -> bool {
        k >= self.window.0 && k <= self.window.1
    }
}

/// Chain factors plus the evidence to attach during message passing.
pub struct BuiltProblem {
    pub prior: DegenerateFactor,
    pub state_vars: Vec<String>,
    pub motion: Vec<DegenerateFactor>,
    pub controls: Vec<Option<(String, DVector<f64>)>>,
    pub measurement: Vec<DegenerateFactor>,
    pub observations: Vec<Option<(String, DVector<f64>)>>,
    /// Worst condition number among the per-step measurement noise models
    /// (finite-variance spectrum only).
    pub max_kappa: f64,
}

impl BuiltProblem {
    pub fn into_graph(self) -> Result<(ClusterGraph, f64), SimError> {
        let kappa = self.max_kappa;
        let graph = ClusterGraph::new(
            self.prior,
            self.state_vars,
            self.motion,
            self.controls,
            self.measurement,
            self.observations,
        )?;
        Ok((graph, kappa))
    }
}

/// Deterministic part of the odometry model for all robots stacked.
fn odometry_mean(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let n = x.len() / 3;
    let mut out = DVector::zeros(3 * n);
    for i in 0..n {
        let (px, py, th) = (x[3 * i], x[3 * i + 1], x[3 * i + 2]);
        let (al, r, be) = (u[3 * i], u[3 * i + 1], u[3 * i + 2]);
        out[3 * i] = px + r * (th + al).cos();
        out[3 * i + 1] = py + r * (th + al).sin();
        out[3 * i + 2] = th + al + be;
    }
    out
}

/// Measurement map under a hypothesis: stacked positions, plus the auxiliary
/// distance/orientation rows on window steps.
fn measurement_mean(x: &DVector<f64>, cooperating: &[usize], with_aux: bool) -> DVector<f64> {
    let n = x.len() / 3;
    let pairs = if with_aux { cooperating.len().saturating_sub(1) } else { 0 };
    let mut out = DVector::zeros(2 * n + 2 * pairs);
    for i in 0..n {
        out[2 * i] = x[3 * i];
        out[2 * i + 1] = x[3 * i + 1];
    }
    for p in 0..pairs {
        let a = cooperating[p];
        let b = cooperating[p + 1];
        let dx = x[3 * b] - x[3 * a];
        let dy = x[3 * b + 1] - x[3 * a + 1];
        out[2 * n + 2 * p] = (dx * dx + dy * dy).sqrt();
        out[2 * n + 2 * p + 1] = x[3 * b + 2] - x[3 * a + 2];
    }
    out
}

/// Measurement noise covariance per the method: `Σ_v` blocks plus exact-zero
/// auxiliary rows (possibly ridge-lifted). Returns the covariance and its
/// finite-spectrum condition number.
fn measurement_noise_cov(
    config: &WorldConfig,
    method: Method,
    aux_rows: usize,
) -> (DMatrix<f64>, f64) {
    let n = config.robot_count;
    let dim = 2 * n + aux_rows;
    let mut cov = DMatrix::zeros(dim, dim);
    for i in 0..n {
        cov[(2 * i, 2 * i)] = config.sigma_v[0];
        cov[(2 * i + 1, 2 * i + 1)] = config.sigma_v[1];
    }
    if let Method::Ridge(lambda) = method {
        for d in 0..dim {
            cov[(d, d)] += lambda;
        }
    }
    let mut max_e = f64::MIN;
    let mut min_pos = f64::MAX;
    for d in 0..dim {
        let e = cov[(d, d)];
        max_e = max_e.max(e);
        if e > 0.0 {
            min_pos = min_pos.min(e);
        }
    }
    let kappa = if min_pos == f64::MAX { 1.0 } else { max_e / min_pos };
    (cov, kappa)
}

/// Builds the full estimation chain for one record under a hypothesis.
///
/// The motion and measurement factors are relinearised per step around the
/// forward (rightward) belief, with observed controls entering the sigma set
/// as point masses, so singular linearisation contexts need no special
/// handling.
pub fn build_problem(
    record: &SimulationRecord,
    hyp: &Hypothesis,
    method: Method,
) -> Result<BuiltProblem, SimError> {
    let config = &record.config;
    let n = config.robot_count;
    let dim_x = 3 * n;
    let steps = config.steps;
    let params = UnscentedParams::default();

    let aux_rows_of = |k: usize| -> usize {
        if method != Method::NoAuxiliary && hyp.in_window(k) {
            2 * config.cooperating.len().saturating_sub(1)
        } else {
            0
        }
    };

    // Prior over x0: true initial poses with variance 0.1 per coordinate.
    let mut mu0 = DVector::zeros(dim_x);
    for i in 0..n {
        mu0[3 * i] = record.poses[0][i].x;
        mu0[3 * i + 1] = record.poses[0][i].y;
        mu0[3 * i + 2] = record.poses[0][i].theta;
    }
    let p0 = DMatrix::identity(dim_x, dim_x) * 0.1;
    let prior = DegenerateFactor::from_gaussian(
        Scope::single("x0", dim_x),
        &mu0,
        &p0,
        RankTolerance::Auto,
    )?;

    // Process noise: independent blocks per robot.
    let mut q_cov = DMatrix::zeros(dim_x, dim_x);
    for i in 0..n {
        for d in 0..3 {
            q_cov[(3 * i + d, 3 * i + d)] = config.sigma_w[d];
        }
    }

    let mut motion = Vec::with_capacity(steps);
    let mut controls = Vec::with_capacity(steps);
    let mut measurement = Vec::with_capacity(steps);
    let mut observations = Vec::with_capacity(steps);
    let mut max_kappa = 1.0f64;

    let mut context = prior.clone(); // rightward message ξ→_{k−1}
    for k in 1..=steps {
        let xk_prev = format!("x{}", k - 1);
        let xk = format!("x{k}");
        let uk = format!("u{k}");
        let zk = format!("z{k}");

        let mut u_obs = DVector::zeros(dim_x);
        for i in 0..n {
            let u = record.controls[k - 1][i];
            u_obs[3 * i] = u.alpha;
            u_obs[3 * i + 1] = u.r;
            u_obs[3 * i + 2] = u.beta;
        }

        // Joint linearisation prior: belief over x_{k-1} with the observed
        // control as a point mass.
        let ctx = context.normalise()?;
        let u_scope = Scope::single(uk.clone(), dim_x);
        let u_dirac = DegenerateFactor::dirac(u_scope.clone(), u_obs.clone())?;
        let joint = ctx
            .extend_scope(&u_scope)?
            .multiply(&u_dirac.extend_scope(ctx.scope())?)?;

        let xk_prev_ref: &str = &xk_prev;
        let uk_ref: &str = &uk;
        let (a_motion, b_motion, _residual) = equivalent_transformation(
            &joint,
            &[xk_prev_ref, uk_ref],
            |x, _w| {
                let xs = x.rows(0, dim_x).into_owned();
                let us = x.rows(dim_x, dim_x).into_owned();
                odometry_mean(&xs, &us)
            },
            &Scope::single(xk.clone(), dim_x),
            params,
        )?;

        let w_noise = DegenerateFactor::from_gaussian(
            Scope::single(xk.clone(), dim_x),
            &DVector::zeros(dim_x),
            &q_cov,
            RankTolerance::Auto,
        )?;
        let in_scope = Scope::new(vec![(xk_prev.clone(), dim_x), (uk.clone(), dim_x)])?;
        let psi = represent_conditional(
            &w_noise,
            &a_motion,
            &b_motion,
            &in_scope,
            &Scope::single(xk.clone(), dim_x),
        )?;

        // Prediction context for the measurement linearisation.
        let psi_reduced = psi.reduce(&[(uk.as_str(), u_obs.clone())])?;
        let prediction = psi_reduced
            .multiply(&context)?
            .marginalise(&[xk_prev.as_str()])?;
        let pred_ctx = prediction.normalise()?;

        let aux_rows = aux_rows_of(k);
        let with_aux = aux_rows > 0;
        let dim_z = 2 * n + aux_rows;
        let cooperating = config.cooperating.clone();
        let (a_meas, b_meas, _residual) = equivalent_transformation(
            &pred_ctx,
            &[xk.as_str()],
            |x, _w| measurement_mean(x, &cooperating, with_aux),
            &Scope::single(zk.clone(), dim_z),
            params,
        )?;

        let (v_cov, kappa) = measurement_noise_cov(config, method, aux_rows);
        max_kappa = max_kappa.max(kappa);
        let v_noise = DegenerateFactor::from_gaussian(
            Scope::single(zk.clone(), dim_z),
            &DVector::zeros(dim_z),
            &v_cov,
            RankTolerance::Auto,
        )?;
        let rho = represent_conditional(
            &v_noise,
            &a_meas,
            &b_meas,
            &Scope::single(xk.clone(), dim_x),
            &Scope::single(zk.clone(), dim_z),
        )?;

        // Observed measurement under the hypothesis.
        let mut z_obs = DVector::zeros(dim_z);
        z_obs
            .rows_mut(0, 2 * n)
            .copy_from(&record.position_measurements[k - 1]);
        if aux_rows > 0 {
            z_obs.rows_mut(2 * n, aux_rows).copy_from(&hyp.aux_targets);
        }

        // Advance the forward context.
        let up = rho.reduce(&[(zk.as_str(), z_obs.clone())])?;
        context = prediction.multiply(&up)?;

        motion.push(psi);
        controls.push(Some((uk, u_obs)));
        measurement.push(rho);
        observations.push(Some((zk, z_obs)));
    }

    Ok(BuiltProblem {
        prior,
        state_vars: (0..=steps).map(|k| format!("x{k}")).collect(),
        motion,
        controls,
        measurement,
        observations,
        max_kappa,
    })
}

/// Ridge-regularised covariance `Σ + λI` with its condition number.
pub fn ridge_baseline(singular_cov: &DMatrix<f64>, lambda: f64) -> (DMatrix<f64>, f64) {
    assert!(lambda > 0.0, "ridge parameter must be positive");
    let n = singular_cov.nrows();
    let mut out = singular_cov.clone();
    for d in 0..n {
        out[(d, d)] += lambda;
    }
    let (_, vals) = degen_factors::subspace::sym_eigen_desc(&out);
    let kappa = vals[0] / vals[n - 1];
    (out, kappa)
}
