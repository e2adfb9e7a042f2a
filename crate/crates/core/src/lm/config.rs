use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// 4 layers, width 256, 4 heads.
    pub fn desk(vocab_size: usize, max_seq: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            dim: 256,
            n_heads: 4,
            max_seq,
            vocab_size,
            dropout: 0.1,
        }
    }

    /// 8 layers, width 512.
    pub fn full(vocab_size: usize, max_seq: usize) -> Self {
        ModelConfig {
            n_layers: 8,
            dim: 512,
            n_heads: 8,
            ..Self::desk(vocab_size, max_seq)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    pub fn mlp_dim(&self) -> usize {
        4 * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.dim == 0 || self.n_heads == 0 {
            return Err(Error::Config("n_layers, dim and n_heads must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if self.max_seq == 0 || self.vocab_size == 0 {
            return Err(Error::Config("max_seq and vocab_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        let per_layer = 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * 4 * d + 4 * d) + (4 * d * d + d);
        self.vocab_size * d
            + self.max_seq * d
            + self.n_layers * per_layer
            + 2 * d
            + d * self.vocab_size
            + self.vocab_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    Linear,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) weight decay on matrices.
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub schedule: LrSchedule,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 3e-4,
            seed: 0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.0,
            warmup_steps: 0,
            schedule: LrSchedule::Constant,
            grad_clip: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("betas must be in [0, 1) and eps > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step` (0-based) of `total` steps.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        let base = self.learning_rate;
        if step < self.warmup_steps {
            return base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        match self.schedule {
            LrSchedule::Constant => base,
            LrSchedule::Linear => base * (1.0 - progress),
            LrSchedule::Cosine => base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
        }
    }
}
