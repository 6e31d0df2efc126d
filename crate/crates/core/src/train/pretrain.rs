//! Supervised pretraining with validation-based checkpoint selection.

use super::adam::{adam_step, AdamState};
use super::config::{mix_seed, TrainConfig};
use super::{batch_from_images, LabeledSet};
use crate::data::augment;
use crate::error::Error;
use crate::loss::task_loss_grad;
use crate::metrics;
use crate::nn::{backward, forward, ArchDescriptor, Mode, ModelParams, UpdateStrategy};
use crate::pose::Pose4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SPLIT_STREAM: u64 = 0x11;
const INIT_STREAM: u64 = 0x22;
const EPOCH_STREAM: u64 = 0x33;
const AUGMENT_STREAM: u64 = 0x44;

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_mae: f64,
}

/// Result of a pretraining run: the best-validation checkpoint and the
/// loss curve that led to it.
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParams<f32>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub epochs: Vec<EpochStats>,
}

/// Trains a fresh model on `set` for the configured number of epochs,
/// holding out a validation share, and returns the checkpoint with the
/// best validation MAE.
pub fn pretrain(
    arch: &ArchDescriptor,
    set: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<PretrainOutcome, Error> {
    cfg.validate()?;
    let n = set.len();
    if set.targets.len() != n {
        return Err(Error::invalid("pretrain", "images and targets differ in length"));
    }
    if n < 2 {
        return Err(Error::invalid("pretrain", "need at least two labeled samples"));
    }
    let val_count = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.stream_seed(SPLIT_STREAM)));
    let (val_idx, train_idx) = order.split_at(val_count);
    let val = LabeledSet {
        images: val_idx.iter().map(|&i| set.images[i].clone()).collect(),
        targets: val_idx.iter().map(|&i| set.targets[i]).collect(),
    };
    let mut train_idx: Vec<usize> = train_idx.to_vec();

    let strategy = UpdateStrategy::all_wb();
    let mut params: ModelParams<f32> = ModelParams::init(arch, cfg.stream_seed(INIT_STREAM))?;
    let mut state = AdamState::new(&params, &strategy);
    let mode = Mode::Train {
        bn_momentum: cfg.bn_momentum,
    };

    let mut best: Option<(usize, f64, ModelParams<f32>)> = None;
    let mut epochs = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 0..cfg.pretrain_epochs {
        let epoch_seed = mix_seed(cfg.stream_seed(EPOCH_STREAM), epoch as u64);
        train_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for (chunk_no, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            let mut targets: Vec<Pose4> = Vec::with_capacity(chunk.len());
            for (k, &i) in chunk.iter().enumerate() {
                match &cfg.augment {
                    Some(aug) => {
                        let sample_seed = mix_seed(
                            cfg.stream_seed(AUGMENT_STREAM),
                            (epoch as u64) << 40 | (chunk_no as u64) << 20 | k as u64,
                        );
                        let (im, label) =
                            augment(&set.images[i], &set.targets[i], aug, sample_seed);
                        images.push(im);
                        targets.push(label);
                    }
                    None => {
                        images.push(set.images[i].clone());
                        targets.push(set.targets[i]);
                    }
                }
            }
            let refs: Vec<&_> = images.iter().collect();
            let batch = batch_from_images(arch, &refs)?;
            let (preds, cache) = forward(&mut params, arch, &batch, mode, &strategy)?;
            let poses = preds.poses();
            let (value, grads) = task_loss_grad(&poses, &targets)?;
            if !value.is_finite() {
                return Err(Error::run(format!(
                    "pretraining diverged: non-finite loss at epoch {epoch}, step {steps}"
                )));
            }
            let upstream: Vec<f32> = grads
                .iter()
                .flat_map(|g| g.iter().map(|&v| v as f32))
                .collect();
            let gstore = backward(&params, arch, &cache, &upstream, &strategy)?;
            adam_step(&mut params, &gstore, &mut state, &cfg.adam)?;
            loss_sum += value;
            steps += 1;
        }

        let val_preds = super::predict_poses(&params, arch, &val.images, cfg.batch_size)?;
        let val_mae = metrics::mae(&val_preds, &val.targets)?;
        if !val_mae.is_finite() {
            return Err(Error::run(format!(
                "pretraining diverged: non-finite validation MAE at epoch {epoch}"
            )));
        }
        epochs.push(EpochStats {
            train_loss: loss_sum / steps.max(1) as f64,
            val_mae,
        });
        let improved = best.as_ref().map_or(true, |(_, b, _)| val_mae < *b);
        if improved {
            best = Some((epoch, val_mae, params.clone()));
        }
    }

    let (best_epoch, best_val_mae, params) = best.expect("at least one epoch ran");
    Ok(PretrainOutcome {
        params,
        best_epoch,
        best_val_mae,
        epochs,
    })
}
