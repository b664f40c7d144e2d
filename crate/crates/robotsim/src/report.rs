//! Experiment drivers: single estimation runs, the ridge-regularisation
//! sweep and Bayesian model comparison over hypothesis grids.

use std::time::{Duration, Instant};

use degen_factors::{gmode, Schedule};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::problem::{build_problem, Hypothesis, Method};
use crate::world::{simulate, SimulationRecord, WorldConfig};
use crate::SimError;

/// Posterior summary for one `(step, robot)` pair.
#[derive(Debug, Clone)]
pub struct StepBelief {
    pub k: usize,
    pub robot: usize,
    pub mean: [f64; 3],
    /// Pose-block covariance entries `(xx, xy, yy, tt)`.
    pub cov: [f64; 4],
    /// Rank of the full posterior covariance at this step.
    pub rank: usize,
}

impl StepBelief {
    /// Trace of the position covariance block.
    pub fn position_trace(&self) -> f64 {
        self.cov[0] + self.cov[2]
    }
}

/// Result of one estimation run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub beliefs: Vec<StepBelief>,
    /// Full posterior covariance per step (for plotting).
    pub step_covariances: Vec<DMatrix<f64>>,
    pub log_evidence: Option<f64>,
    pub max_kappa: f64,
    pub converged: bool,
    pub sweeps: usize,
    pub wall_time: Duration,
}

impl RunReport {
    /// Mean position-covariance trace over the given steps (all robots).
    pub fn mean_window_position_trace(&self, window: (usize, usize)) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for b in &self.beliefs {
            if b.k >= window.0 && b.k <= window.1 {
                total += b.position_trace();
                count += 1;
            }
        }
        total / count.max(1) as f64
    }
}

/// Simulates (if needed) and runs the full inference pipeline for one method.
pub fn run_estimation_on(
    record: &SimulationRecord,
    hyp: &Hypothesis,
    method: Method,
) -> Result<RunReport, SimError> {
    let start = Instant::now();
    let config = &record.config;
    let built = build_problem(record, hyp, method)?;
    let (graph, max_kappa) = built.into_graph()?;
    let messages = graph.pass_messages(&Schedule::default())?;

    let mut beliefs = Vec::with_capacity(config.steps * config.robot_count);
    let mut step_covariances = Vec::with_capacity(config.steps);
    for k in 1..=config.steps {
        let post = graph.posterior(&messages, k)?;
        let m = post.moments()?;
        if !m.mean.iter().all(|v| v.is_finite()) {
            return Err(SimError::Numerical(format!("non-finite posterior at step {k}")));
        }
        for i in 0..config.robot_count {
            beliefs.push(StepBelief {
                k,
                robot: i,
                mean: [m.mean[3 * i], m.mean[3 * i + 1], m.mean[3 * i + 2]],
                cov: [
                    m.covariance[(3 * i, 3 * i)],
                    m.covariance[(3 * i, 3 * i + 1)],
                    m.covariance[(3 * i + 1, 3 * i + 1)],
                    m.covariance[(3 * i + 2, 3 * i + 2)],
                ],
                rank: m.rank,
            });
        }
        step_covariances.push(m.covariance);
    }

    let log_evidence = if gmode::g_enabled() {
        Some(graph.log_evidence(&messages, config.steps)?)
    } else {
        None
    };

    Ok(RunReport {
        beliefs,
        step_covariances,
        log_evidence,
        max_kappa,
        converged: messages.converged,
        sweeps: messages.sweeps,
        wall_time: start.elapsed(),
    })
}

/// Convenience wrapper: simulate under `config`, then estimate with the
/// truthful hypothesis.
pub fn run_estimation(config: &WorldConfig, method: Method) -> Result<RunReport, SimError> {
    let record = simulate(config)?;
    run_estimation_on(&record, &Hypothesis::truth(config), method)
}

/// One row of the ridge sweep table.
#[derive(Debug, Clone)]
pub struct RidgeRow {
    pub lambda: f64,
    pub kappa: f64,
    pub logz_mean: f64,
    pub logz_std: f64,
    pub failures: usize,
}

/// Runs the ridge sweep: for each `λ`, estimation across the seeds with
/// `Σ + λI` measurement noise. Numerical failures are tallied per row, not
/// propagated.
pub fn sweep_ridge(
    base: &WorldConfig,
    lambdas: &[f64],
    seeds: &[u64],
) -> Result<Vec<RidgeRow>, SimError> {
    if lambdas.is_empty() || lambdas.iter().any(|&l| l <= 0.0) {
        return Err(SimError::Config("lambda grid must be positive and nonempty".into()));
    }
    // κ is a property of the regularised noise model alone; compute it
    // analytically so failed runs cannot distort the trend.
    let pairs = base.cooperating.len().saturating_sub(1);
    let singular_dim = 2 * base.robot_count + 2 * pairs;
    let mut singular_cov = nalgebra::DMatrix::zeros(singular_dim, singular_dim);
    for i in 0..base.robot_count {
        singular_cov[(2 * i, 2 * i)] = base.sigma_v[0];
        singular_cov[(2 * i + 1, 2 * i + 1)] = base.sigma_v[1];
    }
    let rows: Vec<RidgeRow> = lambdas
        .par_iter()
        .map(|&lambda| {
            let (_, kappa) = crate::problem::ridge_baseline(&singular_cov, lambda);
            let results: Vec<Result<RunReport, SimError>> = seeds
                .par_iter()
                .map(|&seed| {
                    let config = WorldConfig { seed, ..base.clone() };
                    run_estimation(&config, Method::Ridge(lambda))
                })
                .collect();
            let mut logzs = Vec::new();
            let mut failures = 0usize;
            for r in results {
                match r {
                    Ok(rep) => match rep.log_evidence {
                        Some(z) if z.is_finite() => logzs.push(z),
                        _ => failures += 1,
                    },
                    Err(_) => failures += 1,
                }
            }
            let mean = logzs.iter().sum::<f64>() / logzs.len().max(1) as f64;
            let var = logzs
                .iter()
                .map(|z| (z - mean) * (z - mean))
                .sum::<f64>()
                / logzs.len().max(1) as f64;
            RidgeRow {
                lambda,
                kappa,
                logz_mean: mean,
                logz_std: var.sqrt(),
                failures,
            }
        })
        .collect();
    Ok(rows)
}

/// Model-comparison results over a hypothesis grid.
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub labels: Vec<String>,
    /// `values[h][s]`: log evidence of hypothesis `h` on seed `s` (`None`
    /// marks a failed run).
    pub values: Vec<Vec<Option<f64>>>,
}

impl ComparisonTable {
    pub fn mean_std(&self, h: usize) -> (f64, f64) {
        let xs: Vec<f64> = self.values[h].iter().flatten().cloned().collect();
        let mean = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / xs.len().max(1) as f64;
        (mean, var.sqrt())
    }

    /// Index of the hypothesis with the highest mean log evidence.
    pub fn argmax_mean(&self) -> usize {
        (0..self.labels.len())
            .max_by(|&a, &b| {
                self.mean_std(a)
                    .0
                    .partial_cmp(&self.mean_std(b).0)
                    .expect("finite evidence")
            })
            .expect("nonempty grid")
    }

    /// Per-seed winning hypothesis indices (seeds where every hypothesis
    /// failed are skipped).
    pub fn argmax_per_seed(&self) -> Vec<usize> {
        let seeds = self.values.first().map(|v| v.len()).unwrap_or(0);
        let mut out = Vec::new();
        for s in 0..seeds {
            let mut best: Option<(usize, f64)> = None;
            for h in 0..self.labels.len() {
                if let Some(z) = self.values[h][s] {
                    if best.map(|(_, bz)| z > bz).unwrap_or(true) {
                        best = Some((h, z));
                    }
                }
            }
            if let Some((h, _)) = best {
                out.push(h);
            }
        }
        out
    }
}

/// Runs inference for every hypothesis in a grid across the seeds.
pub fn compare_models(
    base: &WorldConfig,
    hypotheses: &[(String, Hypothesis)],
    seeds: &[u64],
) -> Result<ComparisonTable, SimError> {
    if hypotheses.is_empty() {
        return Err(SimError::Config("hypothesis grid is empty".into()));
    }
    // Simulate each seed once; hypotheses share the records.
    let records: Vec<SimulationRecord> = seeds
        .iter()
        .map(|&seed| simulate(&WorldConfig { seed, ..base.clone() }))
        .collect::<Result<_, _>>()?;
    let values: Vec<Vec<Option<f64>>> = hypotheses
        .par_iter()
        .map(|(_, hyp)| {
            records
                .par_iter()
                .map(|record| {
                    run_estimation_on(record, hyp, Method::Degenerate)
                        .ok()
                        .and_then(|r| r.log_evidence)
                        .filter(|z| z.is_finite())
                })
                .collect()
        })
        .collect();
    Ok(ComparisonTable {
        labels: hypotheses.iter().map(|(l, _)| l.clone()).collect(),
        values,
    })
}
