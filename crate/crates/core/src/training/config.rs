use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::objectives::{ContrastiveConfig, LossWeights};

/// Parameter update rule. Adam's moment estimates are part of the
/// training state and are checkpointed with the weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Adam { beta1, beta2, eps } = *self {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2)) {
                return Err(Error::Config(format!(
                    "adam betas must lie in [0, 1), got {beta1} and {beta2}"
                )));
            }
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::Config(format!(
                    "adam eps must be positive, got {eps}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub weights: LossWeights,
    pub contrastive: ContrastiveConfig,
    pub embed_dim: usize,
    /// Intermediate checkpoint every this many steps; 0 writes only the
    /// final one.
    pub checkpoint_interval: usize,
    pub image_channels: [usize; 2],
    pub hidden_channels: usize,
    pub time_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            seed: 0,
            schedule: ScheduleConfig::default(),
            weights: LossWeights::default(),
            contrastive: ContrastiveConfig::default(),
            embed_dim: 32,
            checkpoint_interval: 250,
            image_channels: [8, 16],
            hidden_channels: 32,
            time_dim: 16,
        }
    }
}

impl TrainConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.embed_dim == 0 || self.hidden_channels == 0 || self.image_channels.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time_dim must be even and >= 2, got {}",
                self.time_dim
            )));
        }
        self.optimizer.validate()?;
        self.schedule.build()?;
        self.weights.validate()?;
        self.contrastive.validate()
    }
}
