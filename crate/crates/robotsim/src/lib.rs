//! Cooperative mobile-robot state estimation over degenerate Gaussian
//! factors: world simulation, estimation-problem construction (including the
//! ridge-regularisation and no-auxiliary baselines), experiment drivers and
//! self-test oracle suites.

pub mod config;
pub mod output;
pub mod problem;
pub mod report;
pub mod selftest;
pub mod world;

use thiserror::Error;

/// Errors from simulation and experiment plumbing.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("factor operation failed: {0}")]
    Factor(#[from] degen_factors::FactorError),

    #[error("inference failed: {0}")]
    Graph(#[from] degen_factors::GraphError),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 2,
            SimError::Graph(degen_factors::GraphError::Inconsistent { .. }) => 3,
            SimError::Io(_) => 2,
            _ => 4,
        }
    }
}
