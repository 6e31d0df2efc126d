//! Training: optimizer, pretraining, fine-tuning, scenario assembly,
//! and the cross-validation experiment protocol.
//!
//! Pretraining is plain supervised regression with Adam, a held-out
//! validation split, and best-checkpoint selection. Fine-tuning
//! minimizes the combined task/consistency objective for a fixed small
//! number of epochs, updates only the parameters its strategy selects,
//! and always returns the final model. Both are deterministic under
//! their seed.

pub mod adam;
pub mod config;
pub mod finetune;
pub mod plan;
pub mod pretrain;
pub mod scenario;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{mix_seed, TrainConfig};
pub use finetune::{finetune, FinetuneReport};
pub use plan::{mean_ci, run_plan, ExperimentPlan, PlanReport, RunMetrics, RunResult, RunSpec};
pub use pretrain::{pretrain, EpochStats, PretrainOutcome};
pub use scenario::{assemble, FinetuneData, STILL_MIN_SECONDS, STILL_SPEED_MAX};

use crate::data::{FlightRecord, Image};
use crate::error::Error;
use crate::metrics::{self, MetricsReport};
use crate::nn::{infer, ArchDescriptor, Batch, ModelParams};
use crate::pose::Pose4;

/// Labeled frames for supervised training or evaluation.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub images: Vec<Image>,
    pub targets: Vec<Pose4>,
}

impl LabeledSet {
    /// Uses each record's ground-truth relative pose as the label.
    pub fn from_records(records: &[FlightRecord]) -> LabeledSet {
        LabeledSet {
            images: records.iter().map(|r| r.image.clone()).collect(),
            targets: records.iter().map(|r| r.relative_pose()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Builds an engine batch from images, checking them against the
/// descriptor's input shape.
pub(crate) fn batch_from_images(
    arch: &ArchDescriptor,
    images: &[&Image],
) -> Result<Batch<f32>, Error> {
    let frames: Vec<Vec<f32>> = images.iter().map(|im| im.to_scalars()).collect();
    Batch::from_frames(
        &frames,
        arch.input.channels,
        arch.input.height,
        arch.input.width,
    )
}

/// Runs inference over `images` in batches and returns one pose per
/// frame.
pub fn predict_poses(
    params: &ModelParams<f32>,
    arch: &ArchDescriptor,
    images: &[Image],
    batch_size: usize,
) -> Result<Vec<Pose4>, Error> {
    if batch_size == 0 {
        return Err(Error::invalid("predict", "batch size must be at least 1"));
    }
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size) {
        let refs: Vec<&Image> = chunk.iter().collect();
        let batch = batch_from_images(arch, &refs)?;
        out.extend(infer(params, arch, &batch)?.poses());
    }
    Ok(out)
}

/// Full metrics of a model on a labeled set.
pub fn evaluate_model(
    params: &ModelParams<f32>,
    arch: &ArchDescriptor,
    set: &LabeledSet,
    batch_size: usize,
) -> Result<MetricsReport, Error> {
    let predictions = predict_poses(params, arch, &set.images, batch_size)?;
    metrics::evaluate(&predictions, &set.targets)
}
