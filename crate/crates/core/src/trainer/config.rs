use serde::{Deserialize, Serialize};

use crate::error::{CtaeError, Result};
use crate::objectives::LossWeights;
use crate::seqmodel::{FusionPath, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Trials per update; `None` means full batch up to 512 training trials,
    /// 32 otherwise.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Train and validation fractions; the remainder is the test split.
    pub split: [f64; 2],
    /// Print a progress line every this many epochs (0 = silent).
    pub report_interval: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub fusion_path: FusionPath,
    /// Reject non-finite intermediate values as soon as they appear.
    pub checked: bool,
}

impl TrainConfig {
    pub const DEFAULT_EPOCHS: usize = 10_000;
    pub const FULL_BATCH_LIMIT: usize = 512;
    pub const MINIBATCH: usize = 32;

    pub fn new(model: ModelConfig, weights: LossWeights, learning_rate: f64) -> Self {
        Self {
            model,
            weights,
            learning_rate,
            epochs: Self::DEFAULT_EPOCHS,
            batch_size: None,
            seed: 0,
            split: [0.7, 0.15],
            report_interval: 0,
            clip_norm: Some(5.0),
            fusion_path: FusionPath::General,
            checked: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CtaeError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == Some(0) {
            return Err(CtaeError::Config("batch size must be positive".into()));
        }
        let [tr, va] = self.split;
        if !(tr > 0.0 && va > 0.0 && tr + va <= 1.0 + 1e-9) {
            return Err(CtaeError::Config(format!("split fractions {tr}, {va} invalid")));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(CtaeError::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn effective_batch(&self, train_trials: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(train_trials.max(1)),
            None if train_trials <= Self::FULL_BATCH_LIMIT => train_trials.max(1),
            None => Self::MINIBATCH,
        }
    }
}
