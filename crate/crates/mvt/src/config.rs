//! JSON training configuration.

use std::path::{Path, PathBuf};

use mvt_core::model::ModelConfig;
use mvt_core::optim::{AdamConfig, LrSchedule};
use mvt_core::synth::DatasetConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    pub model: ModelConfig,
    /// Used by `gen-data`, and to generate in memory when no paths are given.
    pub data: DatasetConfig,
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    /// Views used at evaluation time; defaults to the training view count.
    pub eval_views: Option<usize>,
    /// Independent training runs with consecutive seeds.
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 24,
            schedule: LrSchedule::DESK,
            adam: AdamConfig::default(),
            seed: 0,
            model: ModelConfig::default(),
            data: DatasetConfig::default(),
            train_path: None,
            eval_path: None,
            eval_views: None,
            repeats: 1,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let config: Self = serde_json::from_str(&text).map_err(json_err(path))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(json_err(path))?;
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(HarnessError::Config("repeats must be positive".into()));
        }
        if self.eval_views == Some(0) {
            return Err(HarnessError::Config("eval_views must be positive".into()));
        }
        let s = &self.schedule;
        if s.base_lr.is_nan() || s.base_lr <= 0.0 || s.decay_factor.is_nan() || s.decay_factor <= 0.0 || s.decay_every == 0 {
            return Err(HarnessError::Config("schedule needs a positive rate, factor and period".into()));
        }
        self.model.validate()?;
        if self.model.num_categories != self.data.scene.num_categories {
            return Err(HarnessError::Config(format!(
                "model has {} categories but the data config has {}",
                self.model.num_categories, self.data.scene.num_categories
            )));
        }
        Ok(())
    }

    pub fn eval_view_count(&self) -> usize {
        self.eval_views.unwrap_or(self.model.views)
    }
}
