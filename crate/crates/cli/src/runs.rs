//! Shared plumbing for the experiment commands: checkpoint and dataset
//! loading, the single-fold fine-tune-and-evaluate routine every sweep
//! is built from, and small aggregation helpers.

use crate::fail::{CliError, CliResult};
use fieldtune_core::data::{
    acquire_finetune_set, load_sequence, select, FinetuneSetSpec, FlightRecord,
};
use fieldtune_core::error::Error;
use fieldtune_core::loss::LossScenario;
use fieldtune_core::nn::{load_model, ArchDescriptor, ModelParams, UpdateStrategy};
use fieldtune_core::odom::OdomNoiseParams;
use fieldtune_core::train::{
    assemble, evaluate_model, finetune, mix_seed, AdamConfig, LabeledSet, TrainConfig,
};
use std::collections::BTreeMap;
use std::path::Path;

/// Evaluation batch size; a display convenience, not a tuning knob.
pub const EVAL_BATCH: usize = 32;

/// Seed stream tags, mixed with the fold seed so acquisition, odometry
/// noise, assembly, and optimization draw independent randomness.
const NOISE_TAG: u64 = 0x6f64;
const ASSEMBLE_TAG: u64 = 0x6173;

/// FNV-1a hash for turning subject and domain names into seed tags.
pub fn name_tag(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Loads a model checkpoint, classifying failures as ingestion errors.
pub fn load_checkpoint(path: &Path) -> CliResult<(ArchDescriptor, ModelParams<f32>)> {
    load_model(path).map_err(CliError::ingest)
}

/// Loads one sequence directory, classifying failures as ingestion
/// errors.
pub fn load_records(dir: &Path) -> CliResult<Vec<FlightRecord>> {
    load_sequence(dir).map_err(CliError::ingest)
}

/// Loads `<data>/<subject>` for every subject.
pub fn load_subject_sequences(
    data: &Path,
    subjects: &[String],
) -> CliResult<BTreeMap<String, Vec<FlightRecord>>> {
    let mut map = BTreeMap::new();
    for subject in subjects {
        let dir = data.join(subject);
        map.insert(subject.clone(), load_records(&dir)?);
    }
    Ok(map)
}

/// Loads a pretraining dataset: either a single sequence directory or
/// a directory of sequence directories, concatenated in name order.
pub fn load_dataset(data: &Path) -> CliResult<Vec<FlightRecord>> {
    if data.join(fieldtune_core::data::io::INDEX_NAME).is_file() {
        return load_records(data);
    }
    let mut subdirs: Vec<std::path::PathBuf> = std::fs::read_dir(data)
        .map_err(|e| CliError::ingest(format!("cannot read {}: {e}", data.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join(fieldtune_core::data::io::INDEX_NAME).is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(CliError::ingest(format!(
            "{} holds no sequence directories (no index.txt found)",
            data.display()
        )));
    }
    let mut all = Vec::new();
    for dir in subdirs {
        let mut records = load_records(&dir)?;
        // Sequences are concatenated on a shared clock; shift each one
        // past the previous so timestamps stay strictly increasing.
        if let Some(last) = all.last().map(|r: &FlightRecord| r.timestamp) {
            if records.first().is_some_and(|r| r.timestamp <= last) {
                let shift = last + 1.0 - records[0].timestamp;
                for r in &mut records {
                    r.timestamp += shift;
                }
            }
        }
        all.extend(records);
    }
    Ok(all)
}

/// Everything one fold needs, shared by reference across the pool.
pub struct FoldSetup<'a> {
    pub arch: &'a ArchDescriptor,
    pub base: &'a ModelParams<f32>,
    pub seq: &'a [FlightRecord],
    pub spec: FinetuneSetSpec,
    pub scenario: LossScenario,
    pub strategy: UpdateStrategy,
    pub epochs: usize,
    pub batch_size: usize,
    pub pair_batch: usize,
    pub learning_rate: f64,
    pub augment: bool,
    pub noise: OdomNoiseParams,
}

impl FoldSetup<'_> {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig { lr: self.learning_rate, ..AdamConfig::default() },
            batch_size: self.batch_size,
            pair_batch: self.pair_batch,
            finetune_epochs: self.epochs,
            augment: crate::config::augment_option(self.augment),
            strategy: self.strategy.clone(),
            scenario: self.scenario,
            seed,
            ..TrainConfig::default()
        }
    }
}

/// Result of one fold: test-split error of the checkpoint and of the
/// fine-tuned model it produced.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub samples: usize,
    pub baseline_mae: f64,
    pub tuned_mae: f64,
}

impl FoldOutcome {
    pub fn improvement_pct(&self) -> f64 {
        if self.baseline_mae > 0.0 {
            (1.0 - self.tuned_mae / self.baseline_mae) * 100.0
        } else {
            0.0
        }
    }
}

/// Acquires a fine-tuning segment, evaluates the checkpoint on the
/// quarantined test split, fine-tunes a copy, and evaluates that too.
pub fn run_fold(setup: &FoldSetup, seed: u64) -> Result<FoldOutcome, Error> {
    let split = acquire_finetune_set(setup.seq, &setup.spec, seed)?;
    let test = LabeledSet::from_records(&select(setup.seq, &split.test));
    if test.is_empty() {
        return Err(Error::run(
            "acquisition left no test frames outside the quarantine gap",
        ));
    }
    let baseline = evaluate_model(setup.base, setup.arch, &test, EVAL_BATCH)?;
    let noise = setup.noise.with_seed(mix_seed(seed, NOISE_TAG));
    let data = assemble(
        setup.seq,
        &split.finetune,
        &setup.scenario,
        &noise,
        mix_seed(seed, ASSEMBLE_TAG),
    )?;
    let mut params = setup.base.clone();
    finetune(&mut params, setup.arch, &data, &setup.train_config(seed))?;
    let tuned = evaluate_model(&params, setup.arch, &test, EVAL_BATCH)?;
    Ok(FoldOutcome {
        samples: split.finetune.len(),
        baseline_mae: baseline.mae,
        tuned_mae: tuned.mae,
    })
}

/// Groups successful sweep rows by a series column and aggregates the
/// value column per x: mean with a 95% confidence half-width over
/// folds. Rows whose status column is not "ok" are skipped. Returns
/// series name -> (x, mean, lo, hi) sorted by x, in first-appearance
/// series order.
#[allow(clippy::type_complexity)]
pub fn series_mean_ci(
    rows: &[Vec<String>],
    series_col: usize,
    x_col: usize,
    y_col: usize,
    status_col: usize,
) -> Vec<(String, Vec<(f64, f64, f64, f64)>)> {
    let mut order: Vec<String> = Vec::new();
    let mut grouped: BTreeMap<(String, u64), (f64, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        if row.get(status_col).map(String::as_str) != Some("ok") {
            continue;
        }
        let (Some(name), Some(x), Some(y)) = (
            row.get(series_col),
            row.get(x_col).and_then(|c| c.parse::<f64>().ok()),
            row.get(y_col).and_then(|c| c.parse::<f64>().ok()),
        ) else {
            continue;
        };
        if !order.contains(name) {
            order.push(name.clone());
        }
        grouped
            .entry((name.clone(), x.to_bits()))
            .or_insert_with(|| (x, Vec::new()))
            .1
            .push(y);
    }
    order
        .into_iter()
        .map(|name| {
            let mut points: Vec<(f64, f64, f64, f64)> = grouped
                .iter()
                .filter(|((n, _), _)| *n == name)
                .map(|(_, (x, ys))| {
                    let (mean, half) = fieldtune_core::train::mean_ci(ys, 0.95);
                    (*x, mean, mean - half, mean + half)
                })
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            (name, points)
        })
        .collect()
}

/// Mean of the baseline column over successful rows; NaN when none.
pub fn mean_ok(rows: &[Vec<String>], col: usize, status_col: usize) -> f64 {
    let values: Vec<f64> = rows
        .iter()
        .filter(|row| row.get(status_col).map(String::as_str) == Some("ok"))
        .filter_map(|row| row.get(col).and_then(|c| c.parse::<f64>().ok()))
        .collect();
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Median of a sample; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
