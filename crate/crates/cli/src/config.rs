//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use laserpm_core::datagen::SimulatorConfig;
use laserpm_core::models::{GanConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSource {
    /// Windows drawn from the generated synthetic corpus.
    Gan,
    /// Windows drawn from the simulator corpus directly.
    Simulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    /// Source for forecaster and detector training.
    pub source: TrainSource,
    /// Source for RUL training.
    pub rul_source: TrainSource,
    pub forecast_window: usize,
    pub horizon: usize,
    pub detect_window: usize,
    pub rul_window: usize,
    pub use_attention: bool,
    pub use_stats: bool,
    /// Drop anomalous simulator traces before detector training instead of refusing them.
    pub normal_only: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let defaults = TrainConfig::default();
        Self {
            lr: defaults.lr,
            batch_size: defaults.batch_size,
            epochs: defaults.epochs,
            patience: defaults.patience,
            val_fraction: defaults.val_fraction,
            source: TrainSource::Gan,
            rul_source: TrainSource::Simulator,
            forecast_window: 9,
            horizon: 1,
            detect_window: 10,
            rul_window: 10,
            use_attention: true,
            use_stats: true,
            normal_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub n: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { n: 5600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    pub grid_points: usize,
    /// Labeled corpus to tune on; defaults to the main corpus.
    pub corpus: Option<PathBuf>,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self {
            grid_points: 512,
            corpus: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Held-out corpus; when absent one is simulated with `seed + heldout_seed_offset`.
    pub corpus: Option<PathBuf>,
    pub heldout_seed_offset: u64,
    pub recursive_steps: usize,
    pub ablation: bool,
    pub ablation_epochs: usize,
    pub ablation_stride: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            corpus: None,
            heldout_seed_offset: 1000,
            recursive_steps: 3,
            ablation: true,
            ablation_epochs: 30,
            ablation_stride: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Corpus to stream through the pipeline; defaults to the main corpus.
    pub corpus: Option<PathBuf>,
    /// Overrides the threshold stored in the detector bundle.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives every random stream: simulator, training, GAN and generation.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub models_dir: Option<PathBuf>,
    pub simulator: SimulatorConfig,
    pub train: TrainSection,
    pub gan: GanConfig,
    pub generate: GenerateSection,
    pub threshold: ThresholdSection,
    pub evaluate: EvaluateSection,
    pub pipeline: PipelineSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("out"),
            corpus: None,
            synthetic: None,
            models_dir: None,
            simulator: SimulatorConfig::default(),
            train: TrainSection::default(),
            gan: GanConfig::default(),
            generate: GenerateSection::default(),
            threshold: ThresholdSection::default(),
            evaluate: EvaluateSection::default(),
            pipeline: PipelineSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fills derived paths and propagates the top-level seed.
    pub fn resolve(mut self) -> Self {
        let out = self.out_dir.clone();
        self.corpus.get_or_insert_with(|| out.join("corpus.jsonl"));
        self.synthetic.get_or_insert_with(|| out.join("synthetic.jsonl"));
        self.models_dir.get_or_insert_with(|| out.join("models"));
        self.simulator.seed = self.seed;
        self.gan.seed = self.seed;
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            patience: self.train.patience,
            val_fraction: self.train.val_fraction,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Internal(e.to_string()))
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.out_dir.join("corpus.jsonl"))
    }

    pub fn synthetic_path(&self) -> PathBuf {
        self.synthetic.clone().unwrap_or_else(|| self.out_dir.join("synthetic.jsonl"))
    }

    pub fn model_path(&self, kind: &str) -> PathBuf {
        self.models_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("models"))
            .join(format!("{kind}.json"))
    }
}
