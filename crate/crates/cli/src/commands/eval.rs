//! `eval`: metrics of a checkpoint over a full labeled sequence, with
//! a dummy-predictor row for scale.

use crate::commands::finetune::{metrics_row, METRICS_HEADER};
use crate::config::Ctx;
use crate::fail::{CliError, CliResult};
use crate::runs::{load_checkpoint, load_records, EVAL_BATCH};
use crate::table;
use fieldtune_core::metrics::dummy_mae;
use fieldtune_core::train::{evaluate_model, LabeledSet};

pub const METRICS_NAME: &str = "metrics.csv";
pub const TEXT_NAME: &str = "metrics.txt";

pub fn run(ctx: &Ctx) -> CliResult<Vec<String>> {
    let section = ctx.eval()?;
    let (arch, params) = load_checkpoint(&section.checkpoint)?;
    let seq = load_records(&section.sequence)?;
    let set = LabeledSet::from_records(&seq);
    if set.is_empty() {
        return Err(CliError::ingest("sequence holds no frames"));
    }

    let report = evaluate_model(&params, &arch, &set, EVAL_BATCH).map_err(CliError::run)?;
    let dummy = dummy_mae(&set.targets).map_err(CliError::run)?;

    let mut dummy_row = vec![String::new(); METRICS_HEADER.len()];
    dummy_row[0] = "dummy".to_string();
    dummy_row[1] = set.len().to_string();
    dummy_row[2] = table::num(dummy);

    let rows = vec![metrics_row("model", &report), dummy_row];
    let csv_path = ctx.out.join(METRICS_NAME);
    table::write_csv(&csv_path, METRICS_HEADER, &rows)?;
    let text = table::aligned_text(METRICS_HEADER, &rows);
    let text_path = ctx.out.join(TEXT_NAME);
    std::fs::write(&text_path, &text)
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", text_path.display())))?;

    print!("{text}");
    println!(
        "eval: {} frames, MAE {:.4} (dummy predictor {:.4})",
        set.len(),
        report.mae,
        dummy
    );
    Ok(vec![METRICS_NAME.to_string(), TEXT_NAME.to_string()])
}
