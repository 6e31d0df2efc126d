//! Training hyperparameters shared by pretraining and fine-tuning.

use super::adam::AdamConfig;
use crate::data::AugmentConfig;
use crate::error::Error;
use crate::loss::LossScenario;
use crate::nn::UpdateStrategy;

/// One training recipe: optimizer, batching, epoch counts, the update
/// strategy and loss scenario for fine-tuning, and the seed that makes
/// the whole run reproducible.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    /// Task samples per optimizer step.
    pub batch_size: usize,
    /// Consistency pairs per optimizer step (each contributes two
    /// frames to the forward pass).
    pub pair_batch: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Share of the pretraining set held out for validation.
    pub val_fraction: f64,
    /// Momentum of the batch-norm running statistics during training.
    pub bn_momentum: f64,
    /// Photometric/flip augmentation of task samples, when set. Pair
    /// frames receive the photometric part only; pair geometry is
    /// augmented by time reversal instead.
    pub augment: Option<AugmentConfig>,
    pub strategy: UpdateStrategy,
    pub scenario: LossScenario,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 32,
            pair_batch: 16,
            pretrain_epochs: 100,
            finetune_epochs: 5,
            val_fraction: 0.1,
            bn_momentum: 0.1,
            augment: Some(AugmentConfig::default()),
            strategy: UpdateStrategy::all_wb(),
            scenario: LossScenario::ideal(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.pair_batch == 0 {
            return Err(Error::invalid("train config", "batch sizes must be at least 1"));
        }
        if self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            return Err(Error::invalid("train config", "epoch counts must be at least 1"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 0.5) {
            return Err(Error::invalid(
                "train config",
                "validation fraction must be in (0, 0.5]",
            ));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("train config", "bn momentum must be in [0, 1]"));
        }
        if let Some(aug) = &self.augment {
            aug.validate()?;
        }
        self.scenario.validate()?;
        Ok(())
    }

    /// Derives a related deterministic seed for a named sub-stream.
    pub fn stream_seed(&self, tag: u64) -> u64 {
        mix_seed(self.seed, tag)
    }
}

/// Cheap integer mixing for deriving independent-looking seeds from a
/// base seed and a stream tag.
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut x = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
