//! `pretrain`: supervised training on a labeled dataset, saving the
//! best-validation checkpoint and the loss curve.

use crate::config::Ctx;
use crate::fail::{CliError, CliResult};
use crate::plot::{render_svg, Chart, Series};
use crate::runs::load_dataset;
use crate::table;
use fieldtune_core::nn::save_model;
use fieldtune_core::train::{pretrain, LabeledSet};

pub const MODEL_NAME: &str = "model.net";
pub const CURVE_NAME: &str = "pretrain_curve.csv";
pub const PLOT_NAME: &str = "pretrain_curve.svg";

pub fn run(ctx: &Ctx) -> CliResult<Vec<String>> {
    let section = ctx.pretrain()?;
    let arch = ctx.arch().descriptor()?;
    let cfg = section.train_config(ctx.seed);
    cfg.validate().map_err(CliError::config)?;

    let records = load_dataset(&section.data)?;
    let set = LabeledSet::from_records(&records);
    drop(records);
    let outcome = pretrain(&arch, &set, &cfg).map_err(CliError::run)?;

    save_model(&ctx.out.join(MODEL_NAME), &arch, &outcome.params).map_err(CliError::run)?;

    let rows: Vec<Vec<String>> = outcome
        .epochs
        .iter()
        .enumerate()
        .map(|(epoch, stats)| {
            vec![
                epoch.to_string(),
                table::num(stats.train_loss),
                table::num(stats.val_mae),
            ]
        })
        .collect();
    let csv_path = ctx.out.join(CURVE_NAME);
    table::write_csv(&csv_path, &["epoch", "train_loss", "val_mae"], &rows)?;
    render_curve(ctx)?;

    println!(
        "pretrain: {} samples, {} epochs, best val MAE {:.4} at epoch {}; checkpoint {}",
        set.len(),
        outcome.epochs.len(),
        outcome.best_val_mae,
        outcome.best_epoch,
        ctx.out.join(MODEL_NAME).display()
    );
    Ok(vec![
        MODEL_NAME.to_string(),
        CURVE_NAME.to_string(),
        PLOT_NAME.to_string(),
    ])
}

/// Renders the curve plot from the CSV on disk, so the plot is a pure
/// function of the CSV artifact.
pub fn render_curve(ctx: &Ctx) -> CliResult<()> {
    let (_, rows) = table::read_csv(&ctx.out.join(CURVE_NAME))?;
    let mut train = Series { name: "train loss".to_string(), ..Series::default() };
    let mut val = Series { name: "val MAE".to_string(), ..Series::default() };
    for row in &rows {
        if row.len() < 3 {
            continue;
        }
        let epoch: f64 = row[0].parse().unwrap_or(f64::NAN);
        if let Ok(loss) = row[1].parse::<f64>() {
            train.points.push((epoch, loss));
        }
        if let Ok(mae) = row[2].parse::<f64>() {
            val.points.push((epoch, mae));
        }
    }
    let chart = Chart {
        title: "Pretraining curve".to_string(),
        x_label: "epoch".to_string(),
        y_label: "L1 loss / MAE".to_string(),
        x_log2: false,
        series: vec![train, val],
        baseline: None,
    };
    let path = ctx.out.join(PLOT_NAME);
    std::fs::write(&path, render_svg(&chart))
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", path.display())))
}
