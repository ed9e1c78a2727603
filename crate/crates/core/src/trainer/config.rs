use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelConfig;

/// Training run settings, read from TOML. The `[model]` table holds the
/// [`ModelConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Steps between loss log lines.
    #[serde(default = "defaults::log_interval")]
    pub log_interval: u64,
    /// Steps between holdout evaluations; 0 evaluates only at the end.
    #[serde(default)]
    pub eval_interval: u64,
    /// Steps between checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_interval: u64,
    /// Fraction of the training manifest held out; 0 disables the split.
    #[serde(default = "defaults::holdout_fraction")]
    pub holdout_fraction: f64,
    /// Learning rate is multiplied by `lr_decay_rate` every
    /// `lr_decay_steps` steps, continuously. 1 keeps it constant.
    #[serde(default = "defaults::one")]
    pub lr_decay_rate: f64,
    #[serde(default = "defaults::lr_decay_steps")]
    pub lr_decay_steps: u64,
    /// Manifest of training record files.
    pub train_data: PathBuf,
    /// Optional separate validation manifest, used instead of a holdout.
    #[serde(default)]
    pub validation_data: Option<PathBuf>,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
}

mod defaults {
    use std::path::PathBuf;

    pub fn learning_rate() -> f64 {
        0.0003
    }
    pub fn batch_size() -> usize {
        8
    }
    pub fn max_steps() -> u64 {
        2000
    }
    pub fn log_interval() -> u64 {
        50
    }
    pub fn holdout_fraction() -> f64 {
        0.02
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn lr_decay_steps() -> u64 {
        10_000
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("runs")
    }
}

impl TrainConfig {
    /// Defaults around a model and a training manifest.
    pub fn new(model: ModelConfig, train_data: impl Into<PathBuf>) -> Self {
        TrainConfig {
            learning_rate: defaults::learning_rate(),
            batch_size: defaults::batch_size(),
            max_steps: defaults::max_steps(),
            seed: 0,
            log_interval: defaults::log_interval(),
            eval_interval: 0,
            checkpoint_interval: 0,
            holdout_fraction: defaults::holdout_fraction(),
            lr_decay_rate: 1.0,
            lr_decay_steps: defaults::lr_decay_steps(),
            train_data: train_data.into(),
            validation_data: None,
            output_dir: defaults::output_dir(),
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2 for batch statistics"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout_fraction must lie in [0, 1)"));
        }
        if !(self.lr_decay_rate > 0.0 && self.lr_decay_rate <= 1.0) || self.lr_decay_steps == 0 {
            return Err(Error::config("lr_decay_rate must lie in (0, 1] and lr_decay_steps be positive"));
        }
        self.model.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a TOML file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.train_data);
        resolve(&mut config.output_dir);
        if let Some(v) = config.validation_data.as_mut() {
            resolve(v);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Learning rate in effect for the update taken at `step`.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        if self.lr_decay_rate == 1.0 {
            return self.learning_rate;
        }
        self.learning_rate * self.lr_decay_rate.powf(step as f64 / self.lr_decay_steps as f64)
    }
}
