use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::ModelConfig;
use crate::scenegen::GenConfig;

/// Per-epoch training transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Rotate each scene about the vertical axis by a random multiple of this angle in
    /// degrees; 0 disables rotation, and any value below 1 draws a continuous angle.
    pub rotation_step_degrees: f64,
    /// Uniform per-object translation half-width, meters.
    pub jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_step_degrees: 0.0,
            jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the text classification loss.
    pub beta: f64,
    /// Weight of the object classification loss.
    pub gamma: f64,
    pub lr_fusion: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs at the base learning rate before decay starts.
    pub warm_epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            gamma: 0.5,
            lr_fusion: 5e-5,
            lr_other: 5e-4,
            weight_decay: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            warm_epochs: 40,
            decay_factor: 0.65,
            decay_every: 10,
            epochs: 100,
            batch_size: 24,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.beta < 0.0 || self.gamma < 0.0 {
            return fail("beta and gamma must be nonnegative");
        }
        if self.lr_fusion < 0.0 || self.lr_other < 0.0 || self.weight_decay < 0.0 {
            return fail("learning rates and weight decay must be nonnegative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.decay_every == 0 || self.decay_factor.is_nan() || self.decay_factor <= 0.0 {
            return fail("decay_every and decay_factor must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("Adam betas must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning-rate multiplier for `epoch` (0-based): 1 during the warm period, then one
    /// factor of `decay_factor` per started `decay_every` epochs.
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        if epoch < self.warm_epochs {
            1.0
        } else {
            let steps = (epoch - self.warm_epochs) / self.decay_every + 1;
            self.decay_factor.powi(steps as i32)
        }
    }
}

/// Dataset, model and optimizer settings of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data_seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub generator: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_seed: 0,
            train_samples: 2000,
            test_samples: 500,
            generator: GenConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.train_samples == 0 {
            return Err(Error::Config("train_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}
