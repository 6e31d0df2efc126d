//! Regression metrics for 4-DOF pose predictions: MAE and R².
//!
//! MAE is reported per component and as the per-component mean (sum of
//! the four absolute errors divided by 4); the plain sum is emitted
//! alongside since both conventions are in circulation. R² is the
//! classic 1 − SS_res/SS_tot in percent, computed per output; a
//! predict-the-mean dummy scores exactly 0% and worse models go
//! negative. Yaw residuals are wrapped, and the yaw total sum of
//! squares is taken against the circular mean of the targets so the
//! score is insensitive to where the targets sit on the circle.

use crate::error::Error;
use crate::pose::{component_errors, wrap_angle, Pose4};

/// Per-output R² scores in percent. An output whose targets have zero
/// variance has no defined score and is left unset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R2Scores {
    /// Scores for x, y, z, yaw, in percent.
    pub per_output: [Option<f64>; 4],
}

impl R2Scores {
    /// Mean over the outputs that have a defined score.
    pub fn mean(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_output.iter().flatten().copied().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }
}

/// Everything the evaluation reports for one prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Per-component mean absolute error (average of the four
    /// component MAEs); position components in meters, yaw in radians.
    pub mae: f64,
    /// Sum-convention MAE: mean over samples of the summed 4-DOF
    /// distance, four times [`MetricsReport::mae`].
    pub mae_sum: f64,
    /// Mean absolute error per output (x, y, z, yaw).
    pub component_mae: [f64; 4],
    /// R² per output and its mean.
    pub r2: R2Scores,
    /// Number of samples evaluated.
    pub count: usize,
}

fn check_lengths(predictions: &[Pose4], targets: &[Pose4]) -> Result<(), Error> {
    if predictions.is_empty() {
        return Err(Error::invalid("metrics", "no samples to evaluate"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::invalid(
            "metrics",
            format!(
                "{} predictions vs {} targets",
                predictions.len(),
                targets.len()
            ),
        ));
    }
    Ok(())
}

/// Mean absolute error per output.
pub fn component_mae(predictions: &[Pose4], targets: &[Pose4]) -> Result<[f64; 4], Error> {
    check_lengths(predictions, targets)?;
    let mut sums = [0.0f64; 4];
    for (p, t) in predictions.iter().zip(targets) {
        let e = component_errors(p, t);
        for (s, v) in sums.iter_mut().zip(e) {
            *s += v;
        }
    }
    let n = predictions.len() as f64;
    Ok(sums.map(|s| s / n))
}

/// Per-component mean absolute error: the four component MAEs
/// averaged, i.e. mean 4-DOF distance divided by 4.
pub fn mae(predictions: &[Pose4], targets: &[Pose4]) -> Result<f64, Error> {
    Ok(component_mae(predictions, targets)?.iter().sum::<f64>() / 4.0)
}

/// Sum-convention MAE: mean over samples of the summed 4-DOF distance.
pub fn mae_sum(predictions: &[Pose4], targets: &[Pose4]) -> Result<f64, Error> {
    Ok(component_mae(predictions, targets)?.iter().sum())
}

/// Circular mean of a set of angles.
fn circular_mean(angles: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for a in angles {
        s += a.sin();
        c += a.cos();
    }
    s.atan2(c)
}

/// R² per output in percent. Yaw residuals are wrapped and its total
/// sum of squares uses the circular target mean.
pub fn r2(predictions: &[Pose4], targets: &[Pose4]) -> Result<R2Scores, Error> {
    check_lengths(predictions, targets)?;
    let n = predictions.len() as f64;
    let mut per_output = [None; 4];
    for k in 0..4 {
        let t: Vec<f64> = targets.iter().map(|p| p.as_array()[k]).collect();
        let p: Vec<f64> = predictions.iter().map(|p| p.as_array()[k]).collect();
        let (ss_res, ss_tot) = if k == 3 {
            let mean = circular_mean(t.iter().copied());
            let res: f64 = p
                .iter()
                .zip(&t)
                .map(|(&pi, &ti)| wrap_angle(pi - ti).powi(2))
                .sum();
            let tot: f64 = t.iter().map(|&ti| wrap_angle(ti - mean).powi(2)).sum();
            (res, tot)
        } else {
            let mean = t.iter().sum::<f64>() / n;
            let res: f64 = p.iter().zip(&t).map(|(&pi, &ti)| (pi - ti).powi(2)).sum();
            let tot: f64 = t.iter().map(|&ti| (ti - mean).powi(2)).sum();
            (res, tot)
        };
        if ss_tot > 0.0 {
            per_output[k] = Some(100.0 * (1.0 - ss_res / ss_tot));
        }
    }
    Ok(R2Scores { per_output })
}

/// Computes the full report for one prediction set.
pub fn evaluate(predictions: &[Pose4], targets: &[Pose4]) -> Result<MetricsReport, Error> {
    let component_mae = component_mae(predictions, targets)?;
    let sum: f64 = component_mae.iter().sum();
    Ok(MetricsReport {
        mae: sum / 4.0,
        mae_sum: sum,
        component_mae,
        r2: r2(predictions, targets)?,
        count: predictions.len(),
    })
}

/// MAE of the constant predictor that always answers the per-component
/// mean of the targets (circular mean for yaw): the floor a degenerate
/// model converges to.
pub fn dummy_mae(targets: &[Pose4]) -> Result<f64, Error> {
    if targets.is_empty() {
        return Err(Error::invalid("metrics", "no samples to evaluate"));
    }
    let n = targets.len() as f64;
    let mut mean = [0.0f64; 4];
    for t in targets {
        let a = t.as_array();
        for k in 0..3 {
            mean[k] += a[k] / n;
        }
    }
    mean[3] = circular_mean(targets.iter().map(|t| t.yaw));
    let dummy = Pose4::from_array(mean);
    let predictions = vec![dummy; targets.len()];
    mae(&predictions, targets)
}
