//! Fine-tuning set acquisition and still-subject detection.
//!
//! Acquisition mimics the in-field protocol: pick a random temporally
//! contiguous segment of the flight, subsample it at the acquisition
//! rate, and fine-tune on those frames. Everything adjacent to the
//! segment is quarantined (100 samples on each side) so the evaluation
//! set shares no near-duplicate frames with the fine-tuning set, and
//! the fine-tuning set may never exceed 75% of the sequence.
//!
//! Still detection finds the frames on which a cooperative subject has
//! been standing still long enough for propagated labels and
//! identity-motion consistency pairs to be trustworthy.

use super::FlightRecord;
use crate::error::Error;
use crate::pose::Pose4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How much flight time is collected and at what rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneSetSpec {
    /// Length of the contiguous flight segment, in seconds.
    pub duration_s: f64,
    /// Frame acquisition rate within the segment, in Hz.
    pub rate_hz: f64,
    /// Hard cap on the number of acquired samples.
    pub max_samples: usize,
}

impl FinetuneSetSpec {
    /// The reference acquisition: 128 seconds at the full 4 Hz camera
    /// rate, 512 samples.
    pub fn reference() -> FinetuneSetSpec {
        FinetuneSetSpec {
            duration_s: 128.0,
            rate_hz: 4.0,
            max_samples: usize::MAX,
        }
    }
}

/// Number of samples quarantined on each side of the fine-tuning
/// segment: at 4 Hz, 25 seconds of flight.
pub const EXCLUSION_GAP: usize = 100;

/// Largest share of a sequence the fine-tuning set may use.
pub const MAX_FINETUNE_SHARE: f64 = 0.75;

/// Index sets produced by [`acquire_finetune_set`], both referring to
/// the original sequence and sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcquiredSplit {
    /// Frames to fine-tune on.
    pub finetune: Vec<usize>,
    /// Frames safe to evaluate on: everything at least
    /// [`EXCLUSION_GAP`] samples away from the segment.
    pub test: Vec<usize>,
    /// First index of the chosen segment.
    pub segment_start: usize,
    /// One past the last index of the chosen segment.
    pub segment_end: usize,
}

/// Chooses the fine-tuning segment uniformly at random and splits the
/// sequence. Deterministic given the seed.
pub fn acquire_finetune_set(
    seq: &[FlightRecord],
    spec: &FinetuneSetSpec,
    seed: u64,
) -> Result<AcquiredSplit, Error> {
    let n = seq.len();
    if n < 2 {
        return Err(Error::invalid("acquisition", "sequence too short"));
    }
    if !(spec.duration_s > 0.0) || !(spec.rate_hz > 0.0) || spec.max_samples == 0 {
        return Err(Error::invalid(
            "acquisition",
            "duration, rate, and max samples must be positive",
        ));
    }
    let span = seq[n - 1].timestamp - seq[0].timestamp;
    let native_rate = (n - 1) as f64 / span;
    let segment_len = (spec.duration_s * native_rate).round() as usize;
    if segment_len < 1 || segment_len > n {
        return Err(Error::invalid(
            "acquisition",
            format!(
                "segment of {} samples does not fit a sequence of {n}",
                segment_len
            ),
        ));
    }
    let stride_f = native_rate / spec.rate_hz;
    let stride = stride_f.round().max(1.0) as usize;
    if (stride_f - stride as f64).abs() > 1e-6 * stride_f.max(1.0) {
        return Err(Error::invalid(
            "acquisition",
            format!(
                "acquisition rate {} Hz does not divide the native rate {:.3} Hz",
                spec.rate_hz, native_rate
            ),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segment_start = rng.gen_range(0..=n - segment_len);
    let segment_end = segment_start + segment_len;
    let mut finetune: Vec<usize> = (segment_start..segment_end).step_by(stride).collect();
    finetune.truncate(spec.max_samples);
    let cap = (MAX_FINETUNE_SHARE * n as f64).floor() as usize;
    if finetune.len() > cap {
        return Err(Error::invalid(
            "acquisition",
            format!(
                "{} fine-tuning samples exceed 75% of the {n}-sample sequence",
                finetune.len()
            ),
        ));
    }
    let test = (0..n)
        .filter(|&i| {
            i + EXCLUSION_GAP < segment_start || i >= segment_end + EXCLUSION_GAP
        })
        .collect();
    Ok(AcquiredSplit {
        finetune,
        test,
        segment_start,
        segment_end,
    })
}

/// Clones the records at the given indices, preserving order.
pub fn select(seq: &[FlightRecord], indices: &[usize]) -> Vec<FlightRecord> {
    indices.iter().map(|&i| seq[i].clone()).collect()
}

/// Still-subject windows over raw timestamp and pose tracks: maximal
/// half-open index ranges in which every frame has seen the subject's
/// translational speed stay at or below `v_max` for at least `t_min`
/// seconds. The first `t_min` seconds of a still period are a warm-up
/// and not part of the window.
pub fn detect_still_track(
    timestamps: &[f64],
    subject: &[Pose4],
    v_max: f64,
    t_min: f64,
) -> Vec<(usize, usize)> {
    let n = timestamps.len().min(subject.len());
    if n < 2 {
        return Vec::new();
    }
    // still_step[k]: the subject moved slowly between samples k and k+1.
    let still_step: Vec<bool> = (0..n - 1)
        .map(|k| {
            let dt = timestamps[k + 1] - timestamps[k];
            let dist = subject[k].translation_distance(&subject[k + 1]);
            dt > 0.0 && dist / dt <= v_max
        })
        .collect();
    let mut windows = Vec::new();
    let mut open: Option<usize> = None;
    let mut run_start = 0usize;
    for i in 0..n {
        if i > 0 && !still_step[i - 1] {
            run_start = i;
        }
        let qualified = timestamps[i] - timestamps[run_start] >= t_min && run_start < i;
        match (qualified, open) {
            (true, None) => open = Some(i),
            (false, Some(start)) => {
                windows.push((start, i));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        windows.push((start, n));
    }
    windows
}

/// [`detect_still_track`] over a record sequence.
pub fn detect_still(seq: &[FlightRecord], v_max: f64, t_min: f64) -> Vec<(usize, usize)> {
    let timestamps: Vec<f64> = seq.iter().map(|r| r.timestamp).collect();
    let subject: Vec<Pose4> = seq.iter().map(|r| r.subject_world).collect();
    detect_still_track(&timestamps, &subject, v_max, t_min)
}

/// Flattens windows into the sorted set of member indices.
pub fn window_indices(windows: &[(usize, usize)]) -> Vec<usize> {
    windows.iter().flat_map(|&(lo, hi)| lo..hi).collect()
}
