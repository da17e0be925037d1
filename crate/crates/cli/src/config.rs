//! The run configuration file and its flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use waydcm_core::choice::FitOptions;
use waydcm_core::synth::GenConfig;
use waydcm_core::PipelineConfig;
use waydcm_nn::ModelConfig;
use waydcm_train::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// Share of the corpus held out for evaluation.
    pub test_fraction: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub scenes: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds the generator, the data split, the shuffles and the weight init.
    pub seed: u64,
    pub generator: GenConfig,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fit: FitOptions,
    pub compare: CompareConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            generator: GenConfig::default(),
            pipeline: PipelineConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            fit: FitOptions::default(),
            compare: CompareConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Applies the top-level seed everywhere a seed is consumed and validates
    /// every section.
    pub fn resolve(mut self, seed: Option<u64>) -> CliResult<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.generator.seed = self.seed;
        self.train.seed = self.seed;
        let usage = |e: String| CliError::Usage(e);
        self.generator.validate().map_err(|e| usage(e.to_string()))?;
        self.pipeline.validate().map_err(|e| usage(e.to_string()))?;
        self.model.validate(self.pipeline.num_alternatives()).map_err(usage)?;
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        if !(self.compare.test_fraction > 0.0 && self.compare.test_fraction < 1.0) {
            return Err(usage("compare.test_fraction must be in (0, 1)".into()));
        }
        Ok(self)
    }

    /// SHA-256 of the resolved configuration, as hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Provenance stamped on every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
        }
    }

    /// Comment line opening every CSV output.
    pub fn csv_line(&self) -> String {
        format!(
            "# waydcm {} config_hash={} seed={}\n",
            self.version, self.config_hash, self.seed
        )
    }
}
