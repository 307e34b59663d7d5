//! Run configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Mechanism;
use crate::model::ModelConfig;
use crate::signal::{DatasetFormat, SynthConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset file; when absent the dataset is synthesized from `[synth]`.
    pub path: Option<PathBuf>,
    /// Format override; otherwise taken from the file extension.
    pub format: Option<DatasetFormat>,
}

impl DataConfig {
    pub fn format_for(&self, path: &Path) -> DatasetFormat {
        self.format.unwrap_or_else(|| DatasetFormat::from_path(path))
    }
}

/// Axes of the one-factor-at-a-time ablation around the `[model]`/`[train]` base point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub s_count: Vec<usize>,
    pub l_max: Vec<usize>,
    pub mechanism: Vec<Mechanism>,
    pub vif_loss: Vec<bool>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            s_count: vec![2, 5, 8],
            l_max: vec![0, 2, 3],
            mechanism: Mechanism::ALL.to_vec(),
            vif_loss: vec![false, true],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tag: String,
    pub seed: u64,
    /// Parent of timestamped run directories.
    pub out_dir: PathBuf,
    /// Per-epoch z-scoring before training.
    pub normalize: bool,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tag: "run".into(),
            seed: 0,
            out_dir: PathBuf::from("runs"),
            normalize: true,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

/// Std floor used by per-epoch z-scoring.
pub const NORMALIZE_FLOOR: f64 = 1e-8;

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => Error::config(format!("{prefix}.{path}"), message),
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(origin, e.to_string()))?;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Check every section; errors carry the offending key path.
    pub fn validate(&self) -> Result<()> {
        if self.tag.is_empty() || self.tag.contains(['/', '\\']) {
            return Err(Error::config("tag", "must be a non-empty name without path separators"));
        }
        self.synth.validate().map_err(|e| prefixed("synth", e))?;
        self.model.validate()?;
        self.train.validate()?;
        if self.data.path.is_none() {
            if self.synth.epoch_len != self.model.epoch_len {
                return Err(Error::config(
                    "model.epoch_len",
                    format!("{} disagrees with synth.epoch_len {}", self.model.epoch_len, self.synth.epoch_len),
                ));
            }
            let n = self.synth.n_per_class * crate::signal::NUM_CLASSES;
            if self.train.k_folds > n {
                return Err(Error::config(
                    "train.k_folds",
                    format!("{} folds for {n} synthesized epochs", self.train.k_folds),
                ));
            }
        }
        Ok(())
    }
}
