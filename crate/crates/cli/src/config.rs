use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sparqlcopy::copynet::{
    Batching, DatasetKind, ModelKind, OptimizerConfig, TrainConfig,
};
use sparqlcopy::corpus::Scheme;
use sparqlcopy::endpoint::EndpointConfig;

/// Annotated example files consumed by `train`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub grad_accum: Option<usize>,
    pub hidden: Option<usize>,
    pub lr: Option<f64>,
    pub clip_norm: Option<f64>,
}

/// Everything `train` needs; loaded from TOML and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetKind,
    pub scheme: Scheme,
    pub model: ModelKind,
    pub copy: bool,
    pub seeds: Vec<u64>,
    /// Expected number of runs; must match `seeds` when set.
    pub runs: Option<usize>,
    pub endpoint: EndpointConfig,
    pub out: PathBuf,
    pub data: DataPaths,
    pub training: TrainingOverrides,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            scheme: Scheme::TagWithin,
            model: ModelKind::Toy,
            copy: true,
            seeds: vec![1, 2, 3],
            runs: None,
            endpoint: EndpointConfig::default(),
            out: PathBuf::from("runs"),
            data: DataPaths::default(),
            training: TrainingOverrides::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("train", &self.data.train),
            ("validation", &self.data.validation),
            ("test", &self.data.test),
            ("vocab", &self.data.vocab),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{name} file {} does not exist", p.display());
                }
            }
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            bail!("seeds must be distinct");
        }
        if let Some(runs) = self.runs {
            if runs != self.seeds.len() {
                bail!("{runs} runs requested but {} seeds given", self.seeds.len());
            }
        }
        self.endpoint.validate()?;
        Ok(())
    }

    pub fn hidden(&self) -> usize {
        self.training.hidden.unwrap_or(self.model.hyperparameters().hidden)
    }

    /// Preset values for the model and dataset, with overrides applied.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let hp = self.model.hyperparameters();
        let optimizer = OptimizerConfig {
            lr: self.training.lr.unwrap_or(hp.optimizer.lr),
            ..hp.optimizer
        };
        TrainConfig {
            epochs: self.training.epochs.unwrap_or(self.dataset.epochs(self.model)),
            batching: Batching {
                batch_size: self.training.batch_size.unwrap_or(self.dataset.batch_size(self.model)),
                grad_accum: self.training.grad_accum.unwrap_or(1),
            },
            optimizer,
            schedule: hp.schedule,
            clip_norm: Some(self.training.clip_norm.unwrap_or(5.0)),
            seed,
            shuffle: true,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
