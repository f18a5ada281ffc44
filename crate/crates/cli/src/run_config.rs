use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use reseg::model::ModelConfig;
use reseg::training::{LossConfig, TrainConfig};

/// Class weighting applied to the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Balance {
    #[default]
    None,
    MedianFrequency,
}

/// Everything one training run needs. Relative paths are resolved against
/// the directory holding the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub balance: Balance,
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing run config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Re-validates every embedded config.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate(self.model.classes)?;
        Ok(())
    }
}

/// The model part of a config file that is either a full run config or a
/// bare model config.
pub fn load_model_config(path: &Path) -> anyhow::Result<(ModelConfig, LossConfig)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("model").is_some() {
        let run: RunConfig = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        Ok((run.model, run.loss))
    } else {
        let model: ModelConfig =
            serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        Ok((model, LossConfig::default()))
    }
}
