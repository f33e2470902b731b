//! Loss, optimizer, multi-dataset pre-training, head-only fine-tuning and
//! checkpoint persistence.

mod adam;
mod checkpoint;
mod trainer;

pub use adam::{adam_step, global_norm, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use trainer::{
    finetune_head, normalized_mae, pretrain, pretrain_with, DatasetSampler, EpochStats, FinetuneOutcome, PretrainOutcome,
    DEFAULT_FINETUNE_EPOCHS,
};

use serde::{Deserialize, Serialize};

use crate::data::SplitRatios;
use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Optional bound on the global gradient L2 norm.
    pub grad_clip: Option<f64>,
    pub split: SplitRatios,
    /// Leading share of each training split that is used.
    pub train_fraction: f64,
    /// Optional step decay of the learning rate.
    pub lr_decay: Option<StepDecay>,
}

/// Multiplies the learning rate by `factor` after every `every_epochs` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every_epochs: usize,
    pub factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch_size: 8,
            max_epochs: 100,
            early_stop_patience: 15,
            seed: 0,
            grad_clip: None,
            split: SplitRatios::default(),
            train_fraction: 1.0,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.early_stop_patience == 0 || self.batch_size == 0 {
            return bad("patience and batch size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return bad(format!("betas {:?} outside [0, 1)", self.betas));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train fraction {} outside (0, 1]", self.train_fraction));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("gradient clip bound must be positive".into());
        }
        if let Some(d) = self.lr_decay {
            if d.every_epochs == 0 || !(d.factor > 0.0 && d.factor <= 1.0) {
                return bad(format!("step decay {d:?} needs every_epochs ≥ 1 and factor in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) => self.lr * d.factor.powi(((epoch.max(1) - 1) / d.every_epochs) as i32),
            None => self.lr,
        }
    }
}

/// `(1/RT)·Σ|ŷ − y|`.
pub fn mae_loss(pred: &Var, target: &Tensor) -> Result<Var> {
    pred.mae(target)
}
