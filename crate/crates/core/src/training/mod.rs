//! Optimization: AdamW with a warmup-cosine schedule, checkpoints, the
//! training loop and evaluation.

mod checkpoint;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use optim::{adamw_step, lr_at, AdamState};
pub use trainer::{evaluate, train, EvalReport, MetricRecord, Prepared, Session, TrainOutcome};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// Random affine + elastic augmentation of training images.
    pub augment: bool,
    /// Threshold-crop-resize every image before use.
    pub preprocess: bool,
    /// Probability that a metadata field is blanked ("unknown") in a training
    /// report, drawn afresh per field, sample and epoch. Evaluation always
    /// sees complete reports.
    pub text_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_peak: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 30,
            warmup_epochs: 1,
            augment: false,
            preprocess: true,
            text_dropout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return Err(Error::Config(format!("train.lr = {} must be positive", self.lr_peak)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        for (k, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{k} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("train.eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.text_dropout) {
            return Err(Error::Config(format!("train.text_dropout = {} must lie in [0, 1]", self.text_dropout)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("train.batch_size and train.epochs must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "train.warmup_epochs = {} exceeds train.epochs = {}",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }
}
