//! Fine-tuning: combined-objective optimization over a strategy's
//! parameter subset, fixed epoch count, final model kept.

use super::adam::{adam_step, AdamState};
use super::config::{mix_seed, TrainConfig};
use super::scenario::FinetuneData;
use crate::data::{augment, reverse_pairs, Image};
use crate::error::Error;
use crate::loss::{combined_loss_grad, ConsistencyPair, PairBatch, TaskBatch};
use crate::nn::{backward, forward, ArchDescriptor, Mode, ModelParams};
use crate::pose::Pose4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPOCH_STREAM: u64 = 0x55;
const REVERSE_STREAM: u64 = 0x66;
const AUGMENT_STREAM: u64 = 0x77;

/// Loss trajectory of one fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    /// Mean combined loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Total optimizer steps taken.
    pub steps: usize,
}

fn augmented_scalars(
    image: &Image,
    pose: &Pose4,
    cfg: &TrainConfig,
    flip_allowed: bool,
    seed: u64,
) -> (Vec<f32>, Pose4) {
    match &cfg.augment {
        Some(aug) => {
            let aug = if flip_allowed { aug.clone() } else { aug.without_flip() };
            let (im, label) = augment(image, pose, &aug, seed);
            (im.to_scalars(), label)
        }
        None => (image.to_scalars(), *pose),
    }
}

/// Runs the configured number of fine-tuning epochs on `data`,
/// updating only the parameters selected by the configured strategy,
/// and keeps the final model (no best-checkpoint selection).
pub fn finetune(
    params: &mut ModelParams<f32>,
    arch: &ArchDescriptor,
    data: &FinetuneData,
    cfg: &TrainConfig,
) -> Result<FinetuneReport, Error> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid(
            "finetune",
            "no task samples and no consistency pairs to train on",
        ));
    }
    let strategy = &cfg.strategy;
    let mut state = AdamState::new(params, strategy);
    let mode = Mode::Train {
        bn_momentum: cfg.bn_momentum,
    };

    let mut epoch_losses = Vec::with_capacity(cfg.finetune_epochs);
    let mut total_steps = 0usize;
    for epoch in 0..cfg.finetune_epochs {
        let epoch_seed = mix_seed(cfg.stream_seed(EPOCH_STREAM), epoch as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);

        let mut task = data.task.clone();
        task.shuffle(&mut rng);
        let mut pairs: Vec<ConsistencyPair> = data.pairs.clone();
        reverse_pairs(
            &mut pairs,
            0.5,
            mix_seed(cfg.stream_seed(REVERSE_STREAM), epoch as u64),
        );
        pairs.shuffle(&mut rng);

        let task_chunks = task.len().div_ceil(cfg.batch_size);
        let pair_chunks = pairs.len().div_ceil(cfg.pair_batch);
        let steps = task_chunks.max(pair_chunks).max(1);

        let mut loss_sum = 0.0;
        for step in 0..steps {
            let task_chunk: &[_] = if task.is_empty() {
                &[]
            } else {
                let k = step % task_chunks;
                let lo = k * cfg.batch_size;
                &task[lo..(lo + cfg.batch_size).min(task.len())]
            };
            let pair_chunk: &[ConsistencyPair] = if pairs.is_empty() {
                &[]
            } else {
                let k = step % pair_chunks;
                let lo = k * cfg.pair_batch;
                &pairs[lo..(lo + cfg.pair_batch).min(pairs.len())]
            };

            let mut frames: Vec<Vec<f32>> = Vec::with_capacity(task_chunk.len() + 2 * pair_chunk.len());
            let mut targets: Vec<Pose4> = Vec::with_capacity(task_chunk.len());
            let aug_base = mix_seed(
                cfg.stream_seed(AUGMENT_STREAM),
                (epoch as u64) << 32 | step as u64,
            );
            for (k, s) in task_chunk.iter().enumerate() {
                let (scalars, label) = augmented_scalars(
                    &data.images[s.index],
                    &s.target,
                    cfg,
                    true,
                    mix_seed(aug_base, k as u64),
                );
                frames.push(scalars);
                targets.push(label);
            }
            for (k, p) in pair_chunk.iter().enumerate() {
                let (scalars, _) = augmented_scalars(
                    &data.images[p.i],
                    &Pose4::IDENTITY,
                    cfg,
                    false,
                    mix_seed(aug_base, 0x1_0000 + k as u64),
                );
                frames.push(scalars);
            }
            for (k, p) in pair_chunk.iter().enumerate() {
                let (scalars, _) = augmented_scalars(
                    &data.images[p.j],
                    &Pose4::IDENTITY,
                    cfg,
                    false,
                    mix_seed(aug_base, 0x2_0000 + k as u64),
                );
                frames.push(scalars);
            }

            let batch = crate::nn::Batch::from_frames(
                &frames,
                arch.input.channels,
                arch.input.height,
                arch.input.width,
            )?;
            let (preds, cache) = forward(params, arch, &batch, mode, strategy)?;
            let poses = preds.poses();
            let t = task_chunk.len();
            let p = pair_chunk.len();
            let grad = combined_loss_grad(
                &cfg.scenario,
                &TaskBatch {
                    predictions: &poses[..t],
                    targets: &targets,
                },
                &PairBatch {
                    pred_i: &poses[t..t + p],
                    pred_j: &poses[t + p..],
                    pairs: pair_chunk,
                },
            )?;
            if !grad.value.is_finite() {
                return Err(Error::run(format!(
                    "fine-tuning diverged: non-finite loss at epoch {epoch}, step {step}"
                )));
            }

            let mut upstream: Vec<f32> = Vec::with_capacity(poses.len() * 4);
            for g in &grad.task_grads {
                upstream.extend(g.iter().map(|&v| v as f32));
            }
            for (gi, _) in &grad.pair_grads {
                upstream.extend(gi.iter().map(|&v| v as f32));
            }
            for (_, gj) in &grad.pair_grads {
                upstream.extend(gj.iter().map(|&v| v as f32));
            }
            let gstore = backward(params, arch, &cache, &upstream, strategy)?;
            adam_step(params, &gstore, &mut state, &cfg.adam)?;
            loss_sum += grad.value;
            total_steps += 1;
        }
        epoch_losses.push(loss_sum / steps as f64);
    }

    Ok(FinetuneReport {
        epoch_losses,
        steps: total_steps,
    })
}
