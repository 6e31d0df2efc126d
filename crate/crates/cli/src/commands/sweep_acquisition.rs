//! `sweep-acquisition`: grid over (set size, acquisition rate) with the
//! all-parameter strategy and ideal labels, cross-validated over
//! subjects and folds. Points whose flight segment would exceed the
//! protocol's duration cap are reported infeasible; per-fold failures
//! are logged in their row and the sweep continues.

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

pub const CSV_NAME: &str = "acquisition.csv";
pub const PLOT_NAME: &str = "acquisition.svg";

const HEADER: &[&str] = &[
    "set_size", "rate_hz", "duration_s", "subject", "fold", "seed", "status", "samples",
    "baseline_mae", "tuned_mae", "improvement_pct", "note",
];

struct Point {
    set_size: usize,
    rate_hz: f64,
    duration_s: f64,
    feasible: bool,
    note: String,
}

pub fn run(ctx: &Ctx) -> CliResult<Vec<String>> {
    let section = ctx.acquisition()?;
    section.validate()?;
    let odometry = ctx.odometry();
    odometry.validate()?;
    let (arch, base) = load_checkpoint(&section.checkpoint)?;
    let seqs = load_subject_sequences(&section.data, &section.subjects)?;
    let plan = ExperimentPlan::new(section.subjects.clone(), section.folds, ctx.seed);
    let folds = plan.runs();

    let mut points = Vec::new();
    for &set_size in &section.set_sizes {
        for &rate_hz in &section.rates_hz {
            let duration_s = set_size as f64 / rate_hz;
            let feasible = duration_s <= section.max_duration_s + 1e-9;
            let note = if feasible {
                String::new()
            } else {
                format!(
                    "needs {duration_s} s of flight, over the {} s cap",
                    section.max_duration_s
                )
            };
            points.push(Point { set_size, rate_hz, duration_s, feasible, note });
        }
    }

    let work: Vec<(usize, usize)> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.feasible)
        .flat_map(|(pi, _)| (0..folds.len()).map(move |ri| (pi, ri)))
        .collect();
    let outcomes = run_indexed(work.len(), ctx.jobs, |k| {
        let (pi, ri) = work[k];
        let point = &points[pi];
        let spec = &folds[ri];
        let setup = FoldSetup {
            arch: &arch,
            base: &base,
            seq: &seqs[&spec.subject],
            spec: FinetuneSetSpec {
                duration_s: point.duration_s,
                rate_hz: point.rate_hz,
                max_samples: point.set_size,
            },
            scenario: LossScenario::ideal(),
            strategy: UpdateStrategy::all_wb(),
            epochs: section.epochs,
            batch_size: section.batch_size,
            pair_batch: 16,
            learning_rate: section.learning_rate,
            augment: section.augment,
            noise: odometry.params(),
        };
        run_fold(&setup, spec.seed)
    });

    let mut rows = Vec::new();
    let mut outcome_iter = outcomes.into_iter();
    for point in &points {
        for spec in &folds {
            let lead = vec![
                point.set_size.to_string(),
                table::num(point.rate_hz),
                table::num(point.duration_s),
                spec.subject.clone(),
                spec.fold.to_string(),
                spec.seed.to_string(),
            ];
            let tail = if point.feasible {
                let outcome = outcome_iter.next().expect("one outcome per feasible job");
                outcome_cells(outcome)
            } else {
                infeasible_cells(&point.note)
            };
            rows.push([lead, tail].concat());
        }
    }

    let csv_path = ctx.out.join(CSV_NAME);
    table::write_csv(&csv_path, HEADER, &rows)?;
    render_plot(ctx)?;

    let ok = rows.iter().filter(|r| r[6] == "ok").count();
    println!(
        "sweep-acquisition: {} grid points x {} folds, {} runs ok, {} infeasible rows",
        points.len(),
        folds.len(),
        ok,
        rows.iter().filter(|r| r[6] == "infeasible").count()
    );
    Ok(vec![CSV_NAME.to_string(), PLOT_NAME.to_string()])
}

/// Cells after the identity columns for a completed fold.
pub fn outcome_cells(
    outcome: Result<crate::runs::FoldOutcome, fieldtune_core::error::Error>,
) -> Vec<String> {
    match outcome {
        Ok(fold) => vec![
            "ok".to_string(),
            fold.samples.to_string(),
            table::num(fold.baseline_mae),
            table::num(fold.tuned_mae),
            table::fixed(fold.improvement_pct(), 2),
            String::new(),
        ],
        Err(e) => {
            let text = e.to_string();
            let status = if text.contains("infeasible") { "infeasible" } else { "failed" };
            vec![
                status.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                text,
            ]
        }
    }
}

fn infeasible_cells(note: &str) -> Vec<String> {
    vec![
        "infeasible".to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        note.to_string(),
    ]
}

/// Renders the MAE-vs-set-size chart from the CSV on disk.
pub fn render_plot(ctx: &Ctx) -> CliResult<()> {
    let (_, rows) = table::read_csv(&ctx.out.join(CSV_NAME))?;
    // Series per rate: column 1, x = set size (column 0), y = tuned MAE
    // (column 9), status in column 6.
    let grouped = series_mean_ci(&rows, 1, 0, 9, 6);
    let series: Vec<Series> = grouped
        .into_iter()
        .map(|(rate, points)| Series {
            name: format!("{rate} Hz"),
            points: points.iter().map(|&(x, mean, _, _)| (x, mean)).collect(),
            band: points.iter().map(|&(x, _, lo, hi)| (x, lo, hi)).collect(),
        })
        .collect();
    let baseline = mean_ok(&rows, 8, 6);
    let chart = Chart {
        title: "Fine-tuning set acquisition trade-off".to_string(),
        x_label: "fine-tuning set size".to_string(),
        y_label: "test MAE".to_string(),
        x_log2: true,
        series,
        baseline: baseline.is_finite().then(|| (baseline, "no fine-tuning".to_string())),
    };
    let path = ctx.out.join(PLOT_NAME);
    std::fs::write(&path, render_svg(&chart))
        .map_err(|e| CliError::run(format!("cannot write {}: {e}", path.display())))
}
