//! Cross-validation protocol: repeated fine-tuning runs over subjects
//! and random acquisition folds, with Student-t confidence intervals
//! over the fold results.

use super::config::mix_seed;
use crate::error::Error;
use crate::metrics::MetricsReport;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// The experiment grid: every subject crossed with `folds` random
/// acquisition segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub subjects: Vec<String>,
    pub folds: usize,
    pub base_seed: u64,
}

impl ExperimentPlan {
    pub fn new(subjects: Vec<String>, folds: usize, base_seed: u64) -> ExperimentPlan {
        ExperimentPlan {
            subjects,
            folds,
            base_seed,
        }
    }

    /// The reference protocol: three subjects, three folds each, nine
    /// runs total.
    pub fn reference(base_seed: u64) -> ExperimentPlan {
        ExperimentPlan::new(
            vec!["s1".to_string(), "s2".to_string(), "s3".to_string()],
            3,
            base_seed,
        )
    }

    /// Enumerates the runs with their derived per-run seeds. Fold
    /// seeds are independent across subjects and folds.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::with_capacity(self.subjects.len() * self.folds);
        for subject in &self.subjects {
            let subject_tag = fnv1a(subject.as_bytes());
            for fold in 0..self.folds {
                out.push(RunSpec {
                    subject: subject.clone(),
                    fold,
                    seed: mix_seed(self.base_seed, subject_tag ^ (fold as u64).wrapping_mul(0x9e3779b97f4a7c15)),
                });
            }
        }
        out
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub subject: String,
    pub fold: usize,
    pub seed: u64,
}

/// Metrics of one run: the non-finetuned baseline and the fine-tuned
/// model on the same held-out test frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub baseline: MetricsReport,
    pub tuned: MetricsReport,
}

impl RunMetrics {
    /// Relative MAE improvement over the baseline, in percent.
    pub fn improvement_pct(&self) -> f64 {
        100.0 * (self.baseline.mae - self.tuned.mae) / self.baseline.mae
    }
}

/// Outcome of one run; failures are carried, not fatal.
#[derive(Debug)]
pub struct RunResult {
    pub spec: RunSpec,
    pub outcome: Result<RunMetrics, Error>,
}

/// Aggregate over the successful runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanAggregate {
    pub runs_used: usize,
    pub mean_baseline_mae: f64,
    pub mean_tuned_mae: f64,
    /// Half-width of the 95% confidence interval on the tuned MAE.
    pub tuned_mae_ci: f64,
    pub mean_improvement_pct: f64,
}

/// All rows plus the aggregate (absent if every run failed).
#[derive(Debug)]
pub struct PlanReport {
    pub rows: Vec<RunResult>,
    pub aggregate: Option<PlanAggregate>,
}

/// Mean and half-width of the two-sided `confidence` interval under
/// the Student-t distribution over the sample. With fewer than two
/// values the half-width degenerates to zero.
pub fn mean_ci(values: &[f64], confidence: f64) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("valid t distribution")
        .inverse_cdf(0.5 + confidence / 2.0);
    (mean, t * (var / n as f64).sqrt())
}

/// Executes every run of the plan through `run_one`, carrying per-run
/// failures so a single broken fold does not sink the experiment.
pub fn run_plan<F>(plan: &ExperimentPlan, mut run_one: F) -> PlanReport
where
    F: FnMut(&RunSpec) -> Result<RunMetrics, Error>,
{
    let rows: Vec<RunResult> = plan
        .runs()
        .into_iter()
        .map(|spec| {
            let outcome = run_one(&spec);
            RunResult { spec, outcome }
        })
        .collect();
    let ok: Vec<&RunMetrics> = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let aggregate = if ok.is_empty() {
        None
    } else {
        let tuned: Vec<f64> = ok.iter().map(|m| m.tuned.mae).collect();
        let baseline: Vec<f64> = ok.iter().map(|m| m.baseline.mae).collect();
        let improvement: Vec<f64> = ok.iter().map(|m| m.improvement_pct()).collect();
        let (mean_tuned, ci) = mean_ci(&tuned, 0.95);
        Some(PlanAggregate {
            runs_used: ok.len(),
            mean_baseline_mae: baseline.iter().sum::<f64>() / baseline.len() as f64,
            mean_tuned_mae: mean_tuned,
            tuned_mae_ci: ci,
            mean_improvement_pct: improvement.iter().sum::<f64>() / improvement.len() as f64,
        })
    };
    PlanReport { rows, aggregate }
}
