//! Chain-structured cluster-graph belief propagation over degenerate
//! factors.
//!
//! The chain alternates motion clusters `ψ_k(x_{k−1}, x_k, u_k)` and
//! measurement clusters `ρ_k(x_k, z_k)` with sepsets over the state blocks
//! `x_k`. Message passing reduces the attached evidence, multiplies incoming
//! messages and marginalises; posteriors are products of opposing messages.
//! Messages stay unnormalised so the model evidence can be read off the
//! normalisation bookkeeping.

use std::io::Write as _;
use std::path::PathBuf;

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::degenerate::DegenerateFactor;
use crate::error::FactorError;
use crate::gmode;
use crate::scope::Scope;

/// Errors from graph construction and inference.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("factor operation failed: {0}")]
    Factor(#[from] FactorError),

    #[error("inconsistent evidence in cluster `{cluster}`")]
    Inconsistent { cluster: String },

    #[error("graph structure invalid: {0}")]
    Structure(String),

    #[error("messages have not converged")]
    NotConverged,

    #[error("no message stored for time step {0}")]
    MissingMessage(usize),

    #[error("model evidence requires normalisation bookkeeping (disabled)")]
    EvidenceUnavailable,

    #[error("trace output failed: {0}")]
    Trace(String),
}

/// Message direction labels on the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Rightward,
    Leftward,
    Upward,
    Downward,
}

/// A directional message over a sepset state block.
#[derive(Debug, Clone, Serialize)]
pub struct Message {
    pub direction: Direction,
    pub index: usize,
    pub factor: DegenerateFactor,
}

/// Which update rule the sweeps use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Sum-product: each message multiplies the factor with the incoming
    /// messages and marginalises.
    BeliefPropagation,
    /// Belief-update style: cluster beliefs absorb all incoming messages and
    /// outgoing messages are recovered by division.
    BeliefUpdate,
}

/// Sweep schedule and convergence policy.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub max_sweeps: usize,
    pub convergence_tol: f64,
    /// When set, all messages are dumped as JSON after each sweep.
    pub trace_dir: Option<PathBuf>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::BeliefPropagation,
            max_sweeps: 50,
            convergence_tol: 1e-6,
            trace_dir: None,
        }
    }
}

/// Converged (or stopped) message set for a chain with `K` time steps.
#[derive(Debug, Clone)]
pub struct MessageSet {
    /// `ξ→_k` for `k = 1..K`, over `x_k`.
    pub rightward: Vec<DegenerateFactor>,
    /// `ξ←_k` for `k = 1..K`, over `x_k` (the last entry is vacuous).
    pub leftward: Vec<DegenerateFactor>,
    /// `ξ↑_k` for `k = 1..K`.
    pub upward: Vec<DegenerateFactor>,
    /// `ξ↓_k` for `k = 1..K`.
    pub downward: Vec<DegenerateFactor>,
    pub converged: bool,
    pub sweeps: usize,
    pub final_delta: f64,
}

impl MessageSet {
    fn steps(&self) -> usize {
        self.rightward.len()
    }

    /// All messages with their labels, for tracing and inspection.
    pub fn messages(&self) -> Vec<Message> {
        let mut out = Vec::with_capacity(4 * self.steps());
        for (i, f) in self.rightward.iter().enumerate() {
            out.push(Message {
                direction: Direction::Rightward,
                index: i + 1,
                factor: f.clone(),
            });
        }
        for (i, f) in self.leftward.iter().enumerate() {
            out.push(Message {
                direction: Direction::Leftward,
                index: i + 1,
                factor: f.clone(),
            });
        }
        for (i, f) in self.upward.iter().enumerate() {
            out.push(Message {
                direction: Direction::Upward,
                index: i + 1,
                factor: f.clone(),
            });
        }
        for (i, f) in self.downward.iter().enumerate() {
            out.push(Message {
                direction: Direction::Downward,
                index: i + 1,
                factor: f.clone(),
            });
        }
        out
    }
}

/// Chain cluster graph: a prior over `x_0`, motion factors linking
/// consecutive states and measurement factors hanging off each state.
#[derive(Debug, Clone)]
pub struct ClusterGraph {
    state_vars: Vec<String>,
    prior: DegenerateFactor,
    motion: Vec<DegenerateFactor>,
    controls: Vec<Option<(String, DVector<f64>)>>,
    measurement: Vec<DegenerateFactor>,
    observations: Vec<Option<(String, DVector<f64>)>>,
}

impl ClusterGraph {
    /// Builds the chain.
    ///
    /// `state_vars` names `x_0 .. x_K`; `motion[k−1]` must cover
    /// `(x_{k−1}, x_k)` plus an optional control variable named by
    /// `controls[k−1]`, and `measurement[k−1]` must cover `x_k` plus an
    /// optional observed variable named by `observations[k−1]`.
    pub fn new(
        prior: DegenerateFactor,
        state_vars: Vec<String>,
        motion: Vec<DegenerateFactor>,
        controls: Vec<Option<(String, DVector<f64>)>>,
        measurement: Vec<DegenerateFactor>,
        observations: Vec<Option<(String, DVector<f64>)>>,
    ) -> Result<Self, GraphError> {
        let steps = motion.len();
        if steps == 0 {
            return Err(GraphError::Structure("need at least one time step".into()));
        }
        if state_vars.len() != steps + 1 {
            return Err(GraphError::Structure(format!(
                "expected {} state variables, got {}",
                steps + 1,
                state_vars.len()
            )));
        }
        if measurement.len() != steps
            || controls.len() != steps
            || observations.len() != steps
        {
            return Err(GraphError::Structure(
                "motion/measurement/evidence lists must have equal length".into(),
            ));
        }
        if !prior.scope().contains(&state_vars[0]) {
            return Err(GraphError::Structure(format!(
                "prior does not cover `{}`",
                state_vars[0]
            )));
        }
        for k in 1..=steps {
            let psi = &motion[k - 1];
            if !psi.scope().contains(&state_vars[k - 1]) || !psi.scope().contains(&state_vars[k]) {
                return Err(GraphError::Structure(format!(
                    "motion factor {k} does not cover `{}` and `{}`",
                    state_vars[k - 1],
                    state_vars[k]
                )));
            }
            if let Some((name, _)) = &controls[k - 1] {
                if !psi.scope().contains(name) {
                    return Err(GraphError::Structure(format!(
                        "motion factor {k} does not cover control `{name}`"
                    )));
                }
            }
            let rho = &measurement[k - 1];
            if !rho.scope().contains(&state_vars[k]) {
                return Err(GraphError::Structure(format!(
                    "measurement factor {k} does not cover `{}`",
                    state_vars[k]
                )));
            }
            if let Some((name, _)) = &observations[k - 1] {
                if !rho.scope().contains(name) {
                    return Err(GraphError::Structure(format!(
                        "measurement factor {k} does not cover observation `{name}`"
                    )));
                }
            }
        }
        Ok(Self {
            state_vars,
            prior,
            motion,
            controls,
            measurement,
            observations,
        })
    }

    /// Number of time steps `K`.
    pub fn steps(&self) -> usize {
        self.motion.len()
    }

    /// Number of clusters (one motion plus one measurement per step).
    pub fn cluster_count(&self) -> usize {
        2 * self.steps()
    }

    /// Number of sepsets (`x_1 .. x_K`, each also linking its measurement
    /// cluster; interior states additionally join consecutive motion
    /// clusters).
    pub fn sepset_count(&self) -> usize {
        self.steps()
    }

    pub fn state_vars(&self) -> &[String] {
        &self.state_vars
    }

    fn reduce_cluster(
        factor: &DegenerateFactor,
        evidence: &Option<(String, DVector<f64>)>,
        cluster: String,
    ) -> Result<DegenerateFactor, GraphError> {
        match evidence {
            None => Ok(factor.clone()),
            Some((name, value)) => {
                match factor.reduce(&[(name.as_str(), value.clone())]) {
                    Ok(f) => Ok(f),
                    Err(FactorError::ZeroFactor { .. }) => {
                        Err(GraphError::Inconsistent { cluster })
                    }
                    Err(e) => Err(GraphError::Factor(e)),
                }
            }
        }
    }

    /// Runs message sweeps until convergence (max pairwise divergence
    /// between successive same-label messages below the tolerance) or until
    /// `max_sweeps`.
    pub fn pass_messages(&self, schedule: &Schedule) -> Result<MessageSet, GraphError> {
        let steps = self.steps();

        // Evidence reductions (controls and observations are fixed per run).
        let mut psi_hat = Vec::with_capacity(steps);
        let mut upward = Vec::with_capacity(steps);
        for k in 1..=steps {
            let psi = Self::reduce_cluster(
                &self.motion[k - 1],
                &self.controls[k - 1],
                format!("motion[{k}]"),
            )?;
            for name in psi.scope().names() {
                if name != self.state_vars[k - 1] && name != self.state_vars[k] {
                    return Err(GraphError::Structure(format!(
                        "motion[{k}] still covers `{name}` after evidence reduction"
                    )));
                }
            }
            psi_hat.push(psi);
            let up = Self::reduce_cluster(
                &self.measurement[k - 1],
                &self.observations[k - 1],
                format!("measurement[{k}]"),
            )?;
            for name in up.scope().names() {
                if name != self.state_vars[k] {
                    return Err(GraphError::Structure(format!(
                        "measurement[{k}] still covers `{name}` after evidence reduction"
                    )));
                }
            }
            upward.push(up);
        }

        let vac = |k: usize| {
            DegenerateFactor::vacuous(Scope::single(self.state_vars[k].clone(), self.state_dim(k)))
        };
        let mut rightward: Vec<DegenerateFactor> = (1..=steps).map(vac).collect();
        let mut leftward: Vec<DegenerateFactor> = (1..=steps).map(vac).collect();
        let mut downward: Vec<DegenerateFactor> = (1..=steps).map(vac).collect();

        let mut converged = false;
        let mut sweeps = 0;
        let mut final_delta = f64::INFINITY;
        while sweeps < schedule.max_sweeps {
            sweeps += 1;
            let mut delta: f64 = 0.0;

            // Forward: rightward messages.
            let mut new_right: Vec<DegenerateFactor> = Vec::with_capacity(steps);
            for k in 1..=steps {
                let incoming = if k == 1 {
                    self.prior.clone()
                } else {
                    new_right[k - 2].clone()
                };
                let mut belief = psi_hat[k - 1]
                    .multiply(&incoming)
                    .and_then(|b| b.multiply(&upward[k - 1]))
                    .map_err(|e| self.zero_to_inconsistent(e, k, "motion"))?;
                if schedule.kind == ScheduleKind::BeliefUpdate {
                    belief = belief
                        .multiply(&leftward[k - 1])
                        .map_err(|e| self.zero_to_inconsistent(e, k, "motion"))?;
                }
                let marg = belief
                    .marginalise(&[self.state_vars[k - 1].as_str()])
                    .map_err(GraphError::Factor)?;
                let msg = if schedule.kind == ScheduleKind::BeliefUpdate {
                    marg.divide(&leftward[k - 1]).map_err(GraphError::Factor)?
                } else {
                    marg
                };
                new_right.push(msg);
            }

            // Backward: leftward messages (the last stays vacuous).
            let mut new_left = leftward.clone();
            new_left[steps - 1] = vac(steps);
            for k in (1..steps).rev() {
                let mut belief = psi_hat[k]
                    .multiply(&new_left[k])
                    .and_then(|b| b.multiply(&upward[k]))
                    .map_err(|e| self.zero_to_inconsistent(e, k + 1, "motion"))?;
                if schedule.kind == ScheduleKind::BeliefUpdate {
                    belief = belief
                        .multiply(&new_right[k - 1])
                        .map_err(|e| self.zero_to_inconsistent(e, k + 1, "motion"))?;
                }
                let marg = belief
                    .marginalise(&[self.state_vars[k + 1].as_str()])
                    .map_err(GraphError::Factor)?;
                let msg = if schedule.kind == ScheduleKind::BeliefUpdate {
                    marg.divide(&new_right[k - 1]).map_err(GraphError::Factor)?
                } else {
                    marg
                };
                new_left[k - 1] = msg;
            }

            // Downward messages (measurement-side queries).
            let mut new_down = Vec::with_capacity(steps);
            for k in 1..=steps {
                let incoming = if k == 1 {
                    self.prior.clone()
                } else {
                    new_right[k - 2].clone()
                };
                let belief = psi_hat[k - 1]
                    .multiply(&incoming)
                    .and_then(|b| b.multiply(&new_left[k - 1]))
                    .map_err(|e| self.zero_to_inconsistent(e, k, "motion"))?;
                let msg = belief
                    .marginalise(&[self.state_vars[k - 1].as_str()])
                    .map_err(GraphError::Factor)?;
                new_down.push(msg);
            }

            for k in 0..steps {
                delta = delta.max(message_delta(&new_right[k], &rightward[k]));
                delta = delta.max(message_delta(&new_left[k], &leftward[k]));
                delta = delta.max(message_delta(&new_down[k], &downward[k]));
            }
            rightward = new_right;
            leftward = new_left;
            downward = new_down;
            final_delta = delta;

            if let Some(dir) = &schedule.trace_dir {
                self.dump_sweep(dir, sweeps, &rightward, &leftward, &upward, &downward)?;
            }

            if delta <= schedule.convergence_tol {
                converged = true;
                break;
            }
        }

        Ok(MessageSet {
            rightward,
            leftward,
            upward,
            downward,
            converged,
            sweeps,
            final_delta,
        })
    }

    fn zero_to_inconsistent(&self, e: FactorError, k: usize, kind: &str) -> GraphError {
        match e {
            FactorError::ZeroFactor { .. } => GraphError::Inconsistent {
                cluster: format!("{kind}[{k}]"),
            },
            other => GraphError::Factor(other),
        }
    }

    fn state_dim(&self, k: usize) -> usize {
        let name = &self.state_vars[k];
        for m in &self.motion {
            if let Some(d) = m.scope().dim_of(name) {
                return d;
            }
        }
        self.prior.scope().dim_of(name).unwrap_or(0)
    }

    fn dump_sweep(
        &self,
        dir: &std::path::Path,
        sweep: usize,
        rightward: &[DegenerateFactor],
        leftward: &[DegenerateFactor],
        upward: &[DegenerateFactor],
        downward: &[DegenerateFactor],
    ) -> Result<(), GraphError> {
        std::fs::create_dir_all(dir).map_err(|e| GraphError::Trace(e.to_string()))?;
        let set = MessageSet {
            rightward: rightward.to_vec(),
            leftward: leftward.to_vec(),
            upward: upward.to_vec(),
            downward: downward.to_vec(),
            converged: false,
            sweeps: sweep,
            final_delta: f64::NAN,
        };
        let path = dir.join(format!("sweep_{sweep:03}.json"));
        let mut file =
            std::fs::File::create(&path).map_err(|e| GraphError::Trace(e.to_string()))?;
        let json = serde_json::to_string_pretty(&set.messages())
            .map_err(|e| GraphError::Trace(e.to_string()))?;
        file.write_all(json.as_bytes())
            .map_err(|e| GraphError::Trace(e.to_string()))?;
        Ok(())
    }

    /// Smoothing posterior `ξ→_k · ξ←_k` over `x_k`, normalised for
    /// reporting (`k` is 1-based).
    pub fn posterior(
        &self,
        messages: &MessageSet,
        k: usize,
    ) -> Result<DegenerateFactor, GraphError> {
        let raw = self.unnormalised_posterior(messages, k)?;
        raw.normalise().map_err(GraphError::Factor)
    }

    /// Unnormalised smoothing posterior (carries the evidence mass).
    pub fn unnormalised_posterior(
        &self,
        messages: &MessageSet,
        k: usize,
    ) -> Result<DegenerateFactor, GraphError> {
        if k == 0 || k > messages.steps() {
            return Err(GraphError::MissingMessage(k));
        }
        messages.rightward[k - 1]
            .multiply(&messages.leftward[k - 1])
            .map_err(GraphError::Factor)
    }

    /// Filtering posterior (all leftward messages omitted).
    pub fn filtered_posterior(
        &self,
        messages: &MessageSet,
        k: usize,
    ) -> Result<DegenerateFactor, GraphError> {
        if k == 0 || k > messages.steps() {
            return Err(GraphError::MissingMessage(k));
        }
        messages.rightward[k - 1]
            .normalise()
            .map_err(GraphError::Factor)
    }

    /// Log model evidence: the unnormalised posterior at any step,
    /// marginalised down to the empty scope. Requires converged messages and
    /// normalisation bookkeeping.
    pub fn log_evidence(&self, messages: &MessageSet, k: usize) -> Result<f64, GraphError> {
        if !gmode::g_enabled() {
            return Err(GraphError::EvidenceUnavailable);
        }
        if !messages.converged {
            return Err(GraphError::NotConverged);
        }
        let raw = self.unnormalised_posterior(messages, k)?;
        let names: Vec<&str> = raw.scope().names().collect();
        let empty = raw.marginalise(&names).map_err(GraphError::Factor)?;
        Ok(empty.g())
    }
}

/// Divergence-style distance between successive messages of one label.
///
/// Identical parameters short-circuit to zero; otherwise the KL divergence
/// between the normalised densities is used. When either side cannot be
/// normalised (improper early-sweep messages, or `g` bookkeeping disabled)
/// the comparison falls back to a parameter distance.
fn message_delta(new: &DegenerateFactor, old: &DegenerateFactor) -> f64 {
    if new.scope() != old.scope() {
        return f64::INFINITY;
    }
    if params_close(new, old) {
        return 0.0;
    }
    if gmode::g_enabled() && new.is_normalisable() && old.is_normalisable() {
        if let (Ok(p), Ok(q)) = (new.normalise(), old.normalise()) {
            if let Ok(kl) = p.kl_divergence(&q) {
                return kl.max(0.0);
            }
        }
        f64::INFINITY
    } else {
        param_distance(new, old)
    }
}

fn params_close(a: &DegenerateFactor, b: &DegenerateFactor) -> bool {
    param_distance(a, b) <= 1e-12
}

/// Scale-free distance over the rotation-invariant parameter images.
fn param_distance(a: &DegenerateFactor, b: &DegenerateFactor) -> f64 {
    if a.degeneracy() != b.degeneracy() {
        return f64::INFINITY;
    }
    let prec_a = a.q() * nalgebra::DMatrix::from_diagonal(a.lambda()) * a.q().transpose();
    let prec_b = b.q() * nalgebra::DMatrix::from_diagonal(b.lambda()) * b.q().transpose();
    let scale = prec_a.abs().max().max(prec_b.abs().max()).max(1.0);
    let mut d = (prec_a - prec_b).abs().max() / scale;
    let ha = a.q() * a.h();
    let hb = b.q() * b.h();
    let hscale = ha.abs().max().max(hb.abs().max()).max(1.0);
    d = d.max((ha - hb).abs().max() / hscale);
    if a.degeneracy() > 0 {
        d = d.max((a.r() * a.r().transpose() - b.r() * b.r().transpose()).abs().max());
        let ca = a.r() * a.c();
        let cb = b.r() * b.c();
        let cscale = ca.abs().max().max(cb.abs().max()).max(1.0);
        d = d.max((ca - cb).abs().max() / cscale);
    }
    d
}
