//! Experiment configuration: a TOML key-value document mirroring the
//! world-model and sweep settings, all optional with sensible defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::problem::Method;
use crate::world::WorldConfig;
use crate::SimError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario parameters.
    pub world: WorldConfig,
    /// `degenerate`, `ridge` or `no-auxiliary`.
    pub method: String,
    /// Ridge parameter used when `method = "ridge"`.
    pub ridge_lambda: f64,
    /// λ grid for `sweep-ridge`.
    pub lambda_grid: Vec<f64>,
    /// Pickup-step hypotheses for `compare-models --grid pickup`.
    pub pickup_grid: Vec<usize>,
    /// Relative-size hypotheses for `compare-models --grid size`.
    pub size_grid: Vec<f64>,
    /// Seeds for sweeps and comparisons.
    pub seeds: Vec<u64>,
    /// Output directory for CSV/SVG artifacts.
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            method: "degenerate".to_string(),
            ridge_lambda: 1e-4,
            lambda_grid: (0..13).map(|i| 10f64.powf(-12.0 + i as f64)).collect(),
            pickup_grid: (6..=14).collect(),
            size_grid: vec![0.6, 0.8, 1.0, 1.2, 1.4],
            seeds: (0..20).collect(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| SimError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.world.validate()?;
        self.method_enum()?;
        if self.ridge_lambda <= 0.0 {
            return Err(SimError::Config("ridge_lambda must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(SimError::Config("need at least one seed".into()));
        }
        Ok(())
    }

    pub fn method_enum(&self) -> Result<Method, SimError> {
        match self.method.as_str() {
            "degenerate" => Ok(Method::Degenerate),
            "ridge" => Ok(Method::Ridge(self.ridge_lambda)),
            "no-auxiliary" => Ok(Method::NoAuxiliary),
            other => Err(SimError::Config(format!(
                "unknown method `{other}` (expected degenerate|ridge|no-auxiliary)"
            ))),
        }
    }
}
