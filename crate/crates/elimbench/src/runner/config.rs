//! Declarative experiment configuration, loaded from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::BackendSpec;
use crate::corpus::DatasetSchema;
use crate::hashing::sha256_hex;
use crate::prompting::StrategyCell;
use crate::runner::RunnerError;

fn default_reduce_k() -> usize {
    2
}
fn default_eval_n() -> usize {
    500
}
fn default_shot_n() -> usize {
    10
}
fn default_repeats() -> usize {
    2
}
fn default_parallelism() -> usize {
    4
}

/// Mirrors one experiment end to end; content-hashable for cache keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_name: String,
    /// Evaluation question file.
    pub eval_data: PathBuf,
    /// Shot fixture file; may equal `eval_data` (the split stays disjoint).
    pub shot_data: PathBuf,
    #[serde(default)]
    pub schema: DatasetSchema,
    #[serde(default = "default_reduce_k")]
    pub reduce_k: usize,
    #[serde(default = "default_eval_n")]
    pub eval_n: usize,
    #[serde(default = "default_shot_n")]
    pub shot_n: usize,
    pub seed: u64,
    pub backend: BackendSpec,
    /// Cells to run, e.g. `["da_base", "poe_base"]`.
    pub strategies: Vec<StrategyCell>,
    /// Independent inference runs per cell, for self-consistency.
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Run the full-width elimination protocol instead of reducing the eval
    /// set to `reduce_k` choices.
    #[serde(default)]
    pub iterative: bool,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
}

impl ExperimentConfig {
    pub fn from_toml_path(path: &Path) -> Result<Self, RunnerError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.strategies.is_empty() {
            return Err(RunnerError::Config("strategies must be non-empty".into()));
        }
        let mut cells = self.strategies.clone();
        cells.sort();
        cells.dedup();
        if cells.len() != self.strategies.len() {
            return Err(RunnerError::Config("strategies contain duplicates".into()));
        }
        if self.reduce_k < 2 {
            return Err(RunnerError::Config("reduce_k must be at least 2".into()));
        }
        if self.repeats == 0 {
            return Err(RunnerError::Config("repeats must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(RunnerError::Config("parallelism must be at least 1".into()));
        }
        self.backend
            .validate()
            .map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(())
    }

    /// Stable content hash identifying this configuration.
    pub fn config_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Short prefix used in output file names.
    pub fn run_id(&self) -> String {
        self.config_hash()[..12].to_string()
    }

    pub fn gen_params(&self) -> crate::backend::GenParams {
        let mut params = crate::backend::GenParams::default();
        if let Some(t) = self.temperature {
            params.temperature = t;
        }
        if let Some(m) = self.max_tokens {
            params.max_tokens = m;
        }
        params
    }
}
