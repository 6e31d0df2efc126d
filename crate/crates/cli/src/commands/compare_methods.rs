//! `compare-methods`: the update strategies side by side across set
//! sizes with ideal labels. Reports, without gating, how the fc-only
//! strategy ranks at the largest set size.

use crate::commands::sweep_acquisition::outcome_cells;
use crate::config::Ctx;
use crate::fail::{CliError, CliResult};
use crate::plot::{render_svg, Chart, Series};
use crate::pool::run_indexed;
use crate::runs::{
    load_checkpoint, load_subject_sequences, mean_ok, median, run_fold, series_mean_ci, FoldSetup,
};
use crate::table;
use fieldtune_core::data::FinetuneSetSpec;
use fieldtune_core::loss::LossScenario;
use fieldtune_core::train::ExperimentPlan;

pub const CSV_NAME: &str = "methods.csv";
pub const PLOT_NAME: &str = "methods.svg";

const HEADER: &[&str] = &[
    "strategy", "set_size", "rate_hz", "duration_s", "subject", "fold", "seed", "status",
    "samples", "baseline_mae", "tuned_mae", "improvement_pct", "note",
];

pub fn run(ctx: &Ctx) -> CliResult<Vec<String>> {
    let section = ctx.methods()?;
    section.validate()?;
    let strategies = section.parsed_strategies()?;
    let odometry = ctx.odometry();
    odometry.validate()?;
    let (arch, base) = load_checkpoint(&section.checkpoint)?;
    let seqs = load_subject_sequences(&section.data, &section.subjects)?;
    let plan = ExperimentPlan::new(section.subjects.clone(), section.folds, ctx.seed);
    let folds = plan.runs();

    struct Point {
        strategy_idx: usize,
        set_size: usize,
        duration_s: f64,
        feasible: bool,
    }
    let mut points = Vec::new();
    for (strategy_idx, _) in strategies.iter().enumerate() {
        for &set_size in &section.set_sizes {
            let duration_s = set_size as f64 / section.rate_hz;
            points.push(Point {
                strategy_idx,
                set_size,
                duration_s,
                feasible: duration_s <= section.max_duration_s + 1e-9,
            });
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
                rate_hz: section.rate_hz,
                max_samples: point.set_size,
            },
            scenario: LossScenario::ideal(),
            strategy: strategies[point.strategy_idx].clone(),
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
        let strategy = &strategies[point.strategy_idx];
        for spec in &folds {
            let lead = vec![
                strategy.label().to_string(),
                point.set_size.to_string(),
                table::num(section.rate_hz),
                table::num(point.duration_s),
                spec.subject.clone(),
                spec.fold.to_string(),
                spec.seed.to_string(),
            ];
            let tail = if point.feasible {
                let outcome = outcome_iter.next().expect("one outcome per feasible job");
                outcome_cells(outcome)
            } else {
                vec![
                    "infeasible".to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    format!(
                        "needs {} s of flight, over the {} s cap",
                        point.duration_s, section.max_duration_s
                    ),
                ]
            };
            rows.push([lead, tail].concat());
        }
    }

    let csv_path = ctx.out.join(CSV_NAME);
    table::write_csv(&csv_path, HEADER, &rows)?;
    render_plot(ctx)?;
    report_ranking(&rows, &section.set_sizes);

    println!(
        "compare-methods: {} strategies x {} set sizes x {} folds written to {}",
        strategies.len(),
        section.set_sizes.len(),
        folds.len(),
        csv_path.display()
    );
    Ok(vec![CSV_NAME.to_string(), PLOT_NAME.to_string()])
}

/// Prints the strategy ranking at the largest set size. Informational:
/// the interesting observation is whether fc-only lands last while
/// still beating the baseline.
fn report_ranking(rows: &[Vec<String>], set_sizes: &[usize]) {
    let Some(&largest) = set_sizes.iter().max() else { return };
    let mut by_strategy: Vec<(String, f64)> = Vec::new();
    for row in rows {
        if row[7] != "ok" || row[1] != largest.to_string() {
            continue;
        }
        let name = row[0].clone();
        if !by_strategy.iter().any(|(n, _)| *n == name) {
            let maes: Vec<f64> = rows
                .iter()
                .filter(|r| r[7] == "ok" && r[0] == name && r[1] == largest.to_string())
                .filter_map(|r| r[10].parse().ok())
                .collect();
            by_strategy.push((name, median(&maes)));
        }
    }
    by_strategy.sort_by(|a, b| a.1.total_cmp(&b.1));
    if by_strategy.is_empty() {
        return;
    }
    let ranking: Vec<String> = by_strategy
        .iter()
        .map(|(n, m)| format!("{n} {m:.4}"))
        .collect();
    println!(
        "compare-methods: median tuned MAE at {largest} samples, best first: {}",
        ranking.join(", ")
    );
}

/// Renders the MAE-vs-set-size chart, one series per strategy, from
/// the CSV on disk.
pub fn render_plot(ctx: &Ctx) -> CliResult<()> {
    let (_, rows) = table::read_csv(&ctx.out.join(CSV_NAME))?;
    let grouped = series_mean_ci(&rows, 0, 1, 10, 7);
    let series: Vec<Series> = grouped
        .into_iter()
        .map(|(strategy, points)| Series {
            name: strategy,
            points: points.iter().map(|&(x, mean, _, _)| (x, mean)).collect(),
            band: points.iter().map(|&(x, _, lo, hi)| (x, lo, hi)).collect(),
        })
        .collect();
    let baseline = mean_ok(&rows, 9, 7);
    let chart = Chart {
        title: "Update strategies across set sizes".to_string(),
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
