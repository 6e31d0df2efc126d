//! `finetune`: one self-supervised adaptation run from a checkpoint on
//! one sequence, with before/after metrics on the quarantined test
//! split.

use crate::config::Ctx;
use crate::fail::{CliError, CliResult};
use crate::runs::{load_checkpoint, load_records, EVAL_BATCH};
use crate::table;
use fieldtune_core::data::{acquire_finetune_set, select};
use fieldtune_core::metrics::MetricsReport;
use fieldtune_core::nn::save_model;
use fieldtune_core::odom::OdomNoiseParams;
use fieldtune_core::train::{assemble, evaluate_model, finetune, mix_seed, LabeledSet};

pub const MODEL_NAME: &str = "model.net";
pub const EPOCHS_NAME: &str = "finetune_epochs.csv";
pub const METRICS_NAME: &str = "metrics.csv";

const NOISE_TAG: u64 = 0x6f64;
const ASSEMBLE_TAG: u64 = 0x6173;

pub fn run(ctx: &Ctx) -> CliResult<Vec<String>> {
    let section = ctx.finetune()?;
    let scenario = section.parsed_scenario()?;
    let strategy = section.parsed_strategy()?;
    let odometry = ctx.odometry();
    odometry.validate()?;

    let (arch, base) = load_checkpoint(&section.checkpoint)?;
    let seq = load_records(&section.sequence)?;

    let split =
        acquire_finetune_set(&seq, &section.set_spec(), ctx.seed).map_err(CliError::run)?;
    let test = LabeledSet::from_records(&select(&seq, &split.test));
    if test.is_empty() {
        return Err(CliError::run(
            "acquisition left no test frames outside the quarantine gap",
        ));
    }
    let baseline = evaluate_model(&base, &arch, &test, EVAL_BATCH).map_err(CliError::run)?;

    let noise: OdomNoiseParams =
        odometry.params().with_seed(mix_seed(ctx.seed, NOISE_TAG));
    let data = assemble(
        &seq,
        &split.finetune,
        &scenario,
        &noise,
        mix_seed(ctx.seed, ASSEMBLE_TAG),
    )
    .map_err(CliError::run)?;

    let cfg = fieldtune_core::train::TrainConfig {
        adam: fieldtune_core::train::AdamConfig {
            lr: section.learning_rate,
            ..Default::default()
        },
        batch_size: section.batch_size,
        pair_batch: section.pair_batch,
        finetune_epochs: section.epochs,
        augment: crate::config::augment_option(section.augment),
        strategy: strategy.clone(),
        scenario,
        seed: ctx.seed,
        ..Default::default()
    };
    cfg.validate().map_err(CliError::config)?;

    let mut params = base.clone();
    let report = finetune(&mut params, &arch, &data, &cfg).map_err(CliError::run)?;
    let tuned = evaluate_model(&params, &arch, &test, EVAL_BATCH).map_err(CliError::run)?;

    save_model(&ctx.out.join(MODEL_NAME), &arch, &params).map_err(CliError::run)?;

    let epoch_rows: Vec<Vec<String>> = report
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(epoch, loss)| vec![epoch.to_string(), table::num(*loss)])
        .collect();
    table::write_csv(&ctx.out.join(EPOCHS_NAME), &["epoch", "loss"], &epoch_rows)?;

    let metric_rows = vec![
        metrics_row("baseline", &baseline),
        metrics_row("tuned", &tuned),
    ];
    table::write_csv(&ctx.out.join(METRICS_NAME), METRICS_HEADER, &metric_rows)?;

    let improvement = (1.0 - tuned.mae / baseline.mae) * 100.0;
    println!(
        "finetune: scenario {} strategy {} on {} samples; test MAE {:.4} -> {:.4} ({:+.1}%)",
        scenario.label(),
        strategy.label(),
        split.finetune.len(),
        baseline.mae,
        tuned.mae,
        improvement
    );
    Ok(vec![
        MODEL_NAME.to_string(),
        EPOCHS_NAME.to_string(),
        METRICS_NAME.to_string(),
    ])
}

pub const METRICS_HEADER: &[&str] = &[
    "model", "count", "mae", "mae_sum", "mae_x", "mae_y", "mae_z", "mae_yaw", "r2_x", "r2_y",
    "r2_z", "r2_yaw", "r2_mean",
];

pub fn metrics_row(name: &str, report: &MetricsReport) -> Vec<String> {
    let r2 = |idx: usize| {
        report.r2.per_output[idx]
            .map(table::num)
            .unwrap_or_default()
    };
    vec![
        name.to_string(),
        report.count.to_string(),
        table::num(report.mae),
        table::num(report.mae_sum),
        table::num(report.component_mae[0]),
        table::num(report.component_mae[1]),
        table::num(report.component_mae[2]),
        table::num(report.component_mae[3]),
        r2(0),
        r2(1),
        r2(2),
        r2(3),
        report.r2.mean().map(table::num).unwrap_or_default(),
    ]
}
