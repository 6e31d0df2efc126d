//! `loss-ladder`: the scenario ladder from ideal labels down to fully
//! self-supervised consistency, swept over the pair time delta.
//! Scenarios that need still-subject windows report infeasible folds
//! when the acquired segment has none.

use crate::commands::sweep_acquisition::outcome_cells;
use crate::config::Ctx;
use crate::fail::{CliError, CliResult};
use crate::plot::{render_svg, Chart, Series};
use crate::pool::run_indexed;
use crate::runs::{
    load_checkpoint, load_subject_sequences, mean_ok, run_fold, series_mean_ci, FoldSetup,
};
use crate::table;
use fieldtune_core::data::FinetuneSetSpec;
use fieldtune_core::loss::LossScenario;
use fieldtune_core::nn::UpdateStrategy;
use fieldtune_core::train::ExperimentPlan;

pub const CSV_NAME: &str = "ladder.csv";
pub const PLOT_NAME: &str = "ladder.svg";

const HEADER: &[&str] = &[
    "scenario", "dt", "subject", "fold", "seed", "status", "samples", "baseline_mae",
    "tuned_mae", "improvement_pct", "note",
];

pub fn run(ctx: &Ctx) -> CliResult<Vec<String>> {
    let section = ctx.ladder()?;
    section.validate()?;
    let strategy = UpdateStrategy::parse(&section.strategy).map_err(CliError::config)?;
    let odometry = ctx.odometry();
    odometry.validate()?;
    let (arch, base) = load_checkpoint(&section.checkpoint)?;
    let seqs = load_subject_sequences(&section.data, &section.subjects)?;
    let plan = ExperimentPlan::new(section.subjects.clone(), section.folds, ctx.seed);
    let folds = plan.runs();

    let mut points: Vec<(String, f64, LossScenario)> = Vec::new();
    for label in &section.scenarios {
        for &dt in &section.dts {
            let scenario = LossScenario::from_label(label, dt, section.lambda_sc)
                .map_err(CliError::config)?;
            points.push((label.clone(), dt, scenario));
        }
    }

    let work: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|pi| (0..folds.len()).map(move |ri| (pi, ri)))
        .collect();
    let outcomes = run_indexed(work.len(), ctx.jobs, |k| {
        let (pi, ri) = work[k];
        let (_, _, scenario) = &points[pi];
        let spec = &folds[ri];
        let setup = FoldSetup {
            arch: &arch,
            base: &base,
            seq: &seqs[&spec.subject],
            spec: FinetuneSetSpec {
                duration_s: section.duration_s,
                rate_hz: section.rate_hz,
                max_samples: usize::MAX,
            },
            scenario: *scenario,
            strategy: strategy.clone(),
            epochs: section.epochs,
            batch_size: section.batch_size,
            pair_batch: section.pair_batch,
            learning_rate: section.learning_rate,
            augment: section.augment,
            noise: odometry.params(),
        };
        run_fold(&setup, spec.seed)
    });

    let mut rows = Vec::new();
    let mut outcome_iter = outcomes.into_iter();
    for (label, dt, _) in &points {
        for spec in &folds {
            let lead = vec![
                label.clone(),
                table::num(*dt),
                spec.subject.clone(),
                spec.fold.to_string(),
                spec.seed.to_string(),
            ];
            let outcome = outcome_iter.next().expect("one outcome per job");
            rows.push([lead, outcome_cells(outcome)].concat());
        }
    }

    let csv_path = ctx.out.join(CSV_NAME);
    table::write_csv(&csv_path, HEADER, &rows)?;
    render_plot(ctx)?;

    let ok = rows.iter().filter(|r| r[5] == "ok").count();
    let infeasible = rows.iter().filter(|r| r[5] == "infeasible").count();
    println!(
        "loss-ladder: {} scenarios x {} dt x {} folds; {} ok, {} infeasible",
        section.scenarios.len(),
        section.dts.len(),
        folds.len(),
        ok,
        infeasible
    );
    Ok(vec![CSV_NAME.to_string(), PLOT_NAME.to_string()])
}

/// Renders the MAE-vs-dt chart, one series per scenario, from the CSV
/// on disk.
pub fn render_plot(ctx: &Ctx) -> CliResult<()> {
    let (_, rows) = table::read_csv(&ctx.out.join(CSV_NAME))?;
    let grouped = series_mean_ci(&rows, 0, 1, 8, 5);
    let series: Vec<Series> = grouped
        .into_iter()
        .map(|(scenario, points)| Series {
            name: scenario,
            points: points.iter().map(|&(x, mean, _, _)| (x, mean)).collect(),
            band: points.iter().map(|&(x, _, lo, hi)| (x, lo, hi)).collect(),
        })
        .collect();
    let baseline = mean_ok(&rows, 7, 5);
    let chart = Chart {
        title: "Loss scenarios over pair delta".to_string(),
        x_label: "pair delta dt [s]".to_string(),
        y_label: "test MAE".to_string(),
        x_log2: false,
        series,
        baseline: baseline.is_finite().then(|| (baseline, "no fine-tuning".to_string())),
    };
    let path = ctx.out.join(PLOT_NAME);
    std::fs::write(&path, render_svg(&chart))
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", path.display())))
}
