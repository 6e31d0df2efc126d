//! Pose-regression losses for in-field fine-tuning.
//!
//! Three pieces live here. The supervised task term averages the pose
//! error between predictions and known targets. The state-consistency
//! term needs no absolute labels: for a pair of timesteps it composes
//! the prediction at time i, the drone's relative motion between i and
//! j, and the prediction at time j into a chain that must agree with
//! the subject's own relative motion (identity when the subject holds
//! still or is assumed to). The combined loss mixes both terms with a
//! weight on the consistency part.
//!
//! A scenario describes which information regime is available: how the
//! drone pose is known (exact, integrated odometry, or noisy odometry),
//! how the subject pose is known (exact, odometry, or not at all), and
//! which subset of frames feeds each term. Scenarios render to and
//! parse from compact labels such as `t(a)` or `t(s32)+sc(s128,dD~,H?)`.
//!
//! All losses are plain functions of `Pose4` values and return analytic
//! gradients with respect to the predictions, so the network backward
//! pass can consume them directly as upstream seeds.

use crate::error::Error;
use crate::pose::{delta, relpose, wrap_angle, Pose4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One supervised sample: the frame index into its sequence and the
/// target pose of the subject relative to the drone at that frame.
/// Membership in the task set is expressed by presence in a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSample {
    pub index: usize,
    pub target: Pose4,
}

/// One consistency pair: frame indices `i < j`, the drone's relative
/// motion from i to j as estimated by the available odometry, and the
/// subject's relative motion over the same interval (identity when the
/// subject is unknown or assumed still).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyPair {
    pub i: usize,
    pub j: usize,
    pub odom: Pose4,
    pub subj_rel: Pose4,
}

impl ConsistencyPair {
    /// Swaps the two endpoints, inverting both relative poses. A pair
    /// with zero consistency loss keeps zero loss after reversal, which
    /// makes reversal usable as a label-free augmentation.
    pub fn time_reversed(&self) -> ConsistencyPair {
        ConsistencyPair {
            i: self.j,
            j: self.i,
            odom: self.odom.invert(),
            subj_rel: self.subj_rel.invert(),
        }
    }
}

/// How the composed chain is compared to the subject's relative motion.
///
/// `ChainConsistent` compares the chain to the pose of the subject
/// frame at j expressed in the subject frame at i, which makes the loss
/// exactly zero for ground-truth predictions under perfect odometry.
/// `Inverted` compares to the inverse of that pose instead; both are
/// identical whenever the subject holds still.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScConvention {
    #[default]
    ChainConsistent,
    Inverted,
}

/// Which frames of a sequence feed a loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetSelector {
    /// Every frame.
    All,
    /// At most `max` frames drawn from detected subject-still windows.
    Still { max: usize },
    /// The term is absent.
    Empty,
}

impl SetSelector {
    pub fn is_empty(&self) -> bool {
        matches!(self, SetSelector::Empty)
    }

    fn label(&self) -> String {
        match self {
            SetSelector::All => "a".to_string(),
            SetSelector::Still { max } => format!("s{max}"),
            SetSelector::Empty => String::new(),
        }
    }

    fn parse(text: &str) -> Result<SetSelector, Error> {
        if text == "a" {
            return Ok(SetSelector::All);
        }
        if let Some(num) = text.strip_prefix('s') {
            let max: usize = num
                .parse()
                .map_err(|_| Error::invalid("set selector", format!("bad subset size in {text:?}")))?;
            if max == 0 {
                return Err(Error::invalid("set selector", "subset size must be positive"));
            }
            return Ok(SetSelector::Still { max });
        }
        Err(Error::invalid(
            "set selector",
            format!("expected `a` or `s<N>`, got {text:?}"),
        ))
    }
}

/// How the drone's pose is known when building pair odometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DroneMode {
    /// Exact world pose, so relative motion is exact.
    Absolute,
    /// Exact odometry: relative motion is exact even if the absolute
    /// pose has drifted.
    Odometry,
    /// Odometry corrupted by simulated sensor noise.
    NoisyOdometry,
}

impl DroneMode {
    fn label(&self) -> &'static str {
        match self {
            DroneMode::Absolute => "D",
            DroneMode::Odometry => "dD",
            DroneMode::NoisyOdometry => "dD~",
        }
    }

    fn parse(text: &str) -> Result<DroneMode, Error> {
        match text {
            "D" => Ok(DroneMode::Absolute),
            "dD" => Ok(DroneMode::Odometry),
            "dD~" => Ok(DroneMode::NoisyOdometry),
            other => Err(Error::invalid(
                "drone mode",
                format!("expected D, dD, or dD~, got {other:?}"),
            )),
        }
    }
}

/// How the subject's pose is known when filling the pair target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubjectMode {
    /// Exact world pose.
    Absolute,
    /// Exact relative motion between the pair's endpoints.
    Odometry,
    /// Nothing known; the relative motion is taken as identity.
    Unknown,
}

impl SubjectMode {
    fn label(&self) -> &'static str {
        match self {
            SubjectMode::Absolute => "H",
            SubjectMode::Odometry => "dH",
            SubjectMode::Unknown => "H?",
        }
    }

    fn parse(text: &str) -> Result<SubjectMode, Error> {
        match text {
            "H" => Ok(SubjectMode::Absolute),
            "dH" => Ok(SubjectMode::Odometry),
            "H?" => Ok(SubjectMode::Unknown),
            other => Err(Error::invalid(
                "subject mode",
                format!("expected H, dH, or H?, got {other:?}"),
            )),
        }
    }
}

/// A complete description of the information regime a fine-tuning run
/// operates under: which frames feed the task term, which feed the
/// consistency term, how drone and subject poses are known, the pair
/// time delta, and the consistency weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScenario {
    pub task: SetSelector,
    pub drone: DroneMode,
    pub subject: SubjectMode,
    pub sc: SetSelector,
    /// Time separation of consistency pairs, in seconds. Must be a
    /// multiple of the sequence sample period.
    pub dt: f64,
    /// Weight of the consistency term in the combined loss.
    pub lambda_sc: f64,
    pub convention: ScConvention,
}

impl LossScenario {
    /// Fully supervised fine-tuning on every frame.
    pub fn ideal() -> LossScenario {
        LossScenario {
            task: SetSelector::All,
            drone: DroneMode::Absolute,
            subject: SubjectMode::Absolute,
            sc: SetSelector::Empty,
            dt: 2.0,
            lambda_sc: 1.0,
            convention: ScConvention::ChainConsistent,
        }
    }

    /// Consistency-only fine-tuning on every frame under the given pose
    /// information regime.
    pub fn sc_all(drone: DroneMode, subject: SubjectMode, dt: f64) -> LossScenario {
        LossScenario {
            task: SetSelector::Empty,
            drone,
            subject,
            sc: SetSelector::All,
            dt,
            lambda_sc: 1.0,
            convention: ScConvention::ChainConsistent,
        }
    }

    /// The cooperative still-subject protocol: 32 supervised samples
    /// from still windows plus consistency on 128 still-window pairs,
    /// with noisy drone odometry and no subject information.
    pub fn still_protocol(dt: f64) -> LossScenario {
        LossScenario {
            task: SetSelector::Still { max: 32 },
            drone: DroneMode::NoisyOdometry,
            subject: SubjectMode::Unknown,
            sc: SetSelector::Still { max: 128 },
            dt,
            lambda_sc: 1.0,
            convention: ScConvention::ChainConsistent,
        }
    }

    /// Checks the structural invariants: at least one term present, a
    /// positive pair delta when the consistency term is used, and a
    /// finite non-negative weight.
    pub fn validate(&self) -> Result<(), Error> {
        if self.task.is_empty() && self.sc.is_empty() {
            return Err(Error::invalid("loss scenario", "both loss terms are empty"));
        }
        if !self.sc.is_empty() && !(self.dt > 0.0) {
            return Err(Error::invalid("loss scenario", "pair dt must be positive"));
        }
        if !self.lambda_sc.is_finite() || self.lambda_sc < 0.0 {
            return Err(Error::invalid("loss scenario", "lambda_sc must be finite and >= 0"));
        }
        Ok(())
    }

    /// Renders the compact label, e.g. `t(a)` or `t(s32)+sc(s128,dD~,H?)`.
    /// Pure task scenarios omit the pose modes; they are implied exact.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if !self.task.is_empty() {
            parts.push(format!("t({})", self.task.label()));
        }
        if !self.sc.is_empty() {
            parts.push(format!(
                "sc({},{},{})",
                self.sc.label(),
                self.drone.label(),
                self.subject.label()
            ));
        }
        parts.join("+")
    }

    /// Parses a label produced by [`LossScenario::label`]. The pair
    /// delta and consistency weight are not part of the label and are
    /// supplied separately. A label without a consistency part implies
    /// exact drone and subject poses.
    pub fn from_label(text: &str, dt: f64, lambda_sc: f64) -> Result<LossScenario, Error> {
        let mut task = SetSelector::Empty;
        let mut sc = SetSelector::Empty;
        let mut drone = DroneMode::Absolute;
        let mut subject = SubjectMode::Absolute;
        let mut seen_task = false;
        let mut seen_sc = false;
        for part in text.split('+') {
            let part = part.trim();
            if let Some(body) = part.strip_prefix("t(").and_then(|p| p.strip_suffix(')')) {
                if seen_task {
                    return Err(Error::invalid("scenario label", "duplicate task part"));
                }
                seen_task = true;
                task = SetSelector::parse(body)?;
            } else if let Some(body) = part.strip_prefix("sc(").and_then(|p| p.strip_suffix(')')) {
                if seen_sc {
                    return Err(Error::invalid("scenario label", "duplicate consistency part"));
                }
                seen_sc = true;
                let fields: Vec<&str> = body.split(',').map(str::trim).collect();
                if fields.len() != 3 {
                    return Err(Error::invalid(
                        "scenario label",
                        format!("sc part needs selector,drone,subject, got {part:?}"),
                    ));
                }
                sc = SetSelector::parse(fields[0])?;
                drone = DroneMode::parse(fields[1])?;
                subject = SubjectMode::parse(fields[2])?;
            } else {
                return Err(Error::invalid(
                    "scenario label",
                    format!("unrecognized part {part:?}"),
                ));
            }
        }
        let scenario = LossScenario {
            task,
            drone,
            subject,
            sc,
            dt,
            lambda_sc,
            convention: ScConvention::ChainConsistent,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Subgradient of `delta(a, b)` with respect to `a`: the sign of each
/// component difference, with the yaw difference wrapped first. Zero is
/// used at the kink.
fn delta_grad(a: &Pose4, b: &Pose4) -> [f64; 4] {
    [
        sign0(a.x - b.x),
        sign0(a.y - b.y),
        sign0(a.z - b.z),
        sign0(wrap_angle(a.yaw - b.yaw)),
    ]
}

/// Pulls an upstream gradient on `compose(a, b)` back to gradients on
/// `a` and `b`. Gradients are laid out as `[x, y, z, yaw]`.
fn compose_pullback(a: &Pose4, b: &Pose4, g: [f64; 4]) -> ([f64; 4], [f64; 4]) {
    let (s, c) = a.yaw.sin_cos();
    let ga = [
        g[0],
        g[1],
        g[2],
        g[3] + g[0] * (-s * b.x - c * b.y) + g[1] * (c * b.x - s * b.y),
    ];
    let gb = [c * g[0] + s * g[1], -s * g[0] + c * g[1], g[2], g[3]];
    (ga, gb)
}

/// Pulls an upstream gradient on `a.invert()` back to a gradient on `a`.
fn invert_pullback(a: &Pose4, g: [f64; 4]) -> [f64; 4] {
    let (s, c) = a.yaw.sin_cos();
    [
        -c * g[0] + s * g[1],
        -s * g[0] - c * g[1],
        -g[2],
        g[0] * (s * a.x - c * a.y) + g[1] * (c * a.x + s * a.y) - g[3],
    ]
}

/// Mean pose error between predictions and targets. Errors when the
/// sample set is empty; the combined loss skips the term instead of
/// calling this.
pub fn task_loss(predictions: &[Pose4], targets: &[Pose4]) -> Result<f64, Error> {
    if predictions.is_empty() {
        return Err(Error::invalid("task loss", "sample set is empty"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::invalid(
            "task loss",
            format!(
                "{} predictions vs {} targets",
                predictions.len(),
                targets.len()
            ),
        ));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| delta(p, t))
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Task loss plus its gradient with respect to each prediction.
pub fn task_loss_grad(
    predictions: &[Pose4],
    targets: &[Pose4],
) -> Result<(f64, Vec<[f64; 4]>), Error> {
    let value = task_loss(predictions, targets)?;
    let scale = 1.0 / predictions.len() as f64;
    let grads = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let g = delta_grad(p, t);
            [g[0] * scale, g[1] * scale, g[2] * scale, g[3] * scale]
        })
        .collect();
    Ok((value, grads))
}

/// Moves a relative-pose target known at time i forward to time j using
/// the drone's relative motion, assuming the subject holds still:
/// the new target is `invert(odom_ij) * known`.
pub fn propagate_target(known: &Pose4, odom_ij: &Pose4) -> Pose4 {
    odom_ij.invert().compose(known)
}

/// State-consistency loss of one pair under the chain-consistent
/// convention: the chain `invert(pred_i) * odom_ij * pred_j` must match
/// the subject's relative motion.
pub fn sc_loss(pred_i: &Pose4, pred_j: &Pose4, odom_ij: &Pose4, subj_rel: &Pose4) -> f64 {
    sc_loss_with(
        ScConvention::ChainConsistent,
        pred_i,
        pred_j,
        odom_ij,
        subj_rel,
    )
}

/// State-consistency loss of one pair under an explicit target
/// convention.
pub fn sc_loss_with(
    convention: ScConvention,
    pred_i: &Pose4,
    pred_j: &Pose4,
    odom_ij: &Pose4,
    subj_rel: &Pose4,
) -> f64 {
    let target = match convention {
        ScConvention::ChainConsistent => *subj_rel,
        ScConvention::Inverted => subj_rel.invert(),
    };
    let chain = pred_i.invert().compose(odom_ij).compose(pred_j);
    delta(&chain, &target)
}

/// Consistency loss of one pair plus its gradients with respect to the
/// two predictions, obtained by pulling the pose-error subgradient back
/// through the composition chain.
pub fn sc_pair_grad(
    convention: ScConvention,
    pred_i: &Pose4,
    pred_j: &Pose4,
    pair: &ConsistencyPair,
) -> (f64, [f64; 4], [f64; 4]) {
    let target = match convention {
        ScConvention::ChainConsistent => pair.subj_rel,
        ScConvention::Inverted => pair.subj_rel.invert(),
    };
    let t1 = pred_i.invert();
    let t2 = t1.compose(&pair.odom);
    let t3 = t2.compose(pred_j);
    let value = delta(&t3, &target);
    let g3 = delta_grad(&t3, &target);
    let (g_t2, g_pred_j) = compose_pullback(&t2, pred_j, g3);
    let (g_t1, _g_odom) = compose_pullback(&t1, &pair.odom, g_t2);
    let g_pred_i = invert_pullback(pred_i, g_t1);
    (value, g_pred_i, g_pred_j)
}

/// Supervised samples of one optimizer step: a prediction and a target
/// per sample, in matching order.
#[derive(Debug, Clone, Copy)]
pub struct TaskBatch<'a> {
    pub predictions: &'a [Pose4],
    pub targets: &'a [Pose4],
}

impl TaskBatch<'_> {
    pub const EMPTY: TaskBatch<'static> = TaskBatch {
        predictions: &[],
        targets: &[],
    };
}

/// Consistency pairs of one optimizer step with the model predictions
/// at both endpoints, in matching order.
#[derive(Debug, Clone, Copy)]
pub struct PairBatch<'a> {
    pub pred_i: &'a [Pose4],
    pub pred_j: &'a [Pose4],
    pub pairs: &'a [ConsistencyPair],
}

impl PairBatch<'_> {
    pub const EMPTY: PairBatch<'static> = PairBatch {
        pred_i: &[],
        pred_j: &[],
        pairs: &[],
    };
}

fn check_batches(task: &TaskBatch, pairs: &PairBatch) -> Result<(), Error> {
    if task.predictions.len() != task.targets.len() {
        return Err(Error::invalid("combined loss", "task batch length mismatch"));
    }
    if pairs.pred_i.len() != pairs.pairs.len() || pairs.pred_j.len() != pairs.pairs.len() {
        return Err(Error::invalid("combined loss", "pair batch length mismatch"));
    }
    if task.predictions.is_empty() && pairs.pairs.is_empty() {
        return Err(Error::invalid("combined loss", "both loss terms are empty"));
    }
    Ok(())
}

/// Mean consistency loss over a pair batch.
fn sc_batch_value(convention: ScConvention, pairs: &PairBatch) -> f64 {
    let sum: f64 = pairs
        .pairs
        .iter()
        .enumerate()
        .map(|(k, pair)| {
            sc_loss_with(
                convention,
                &pairs.pred_i[k],
                &pairs.pred_j[k],
                &pair.odom,
                &pair.subj_rel,
            )
        })
        .sum();
    sum / pairs.pairs.len() as f64
}

/// Combined loss: task term plus `lambda_sc` times the consistency
/// term, each averaged over its batch. An empty batch drops its term;
/// both empty is a configuration error.
pub fn combined_loss(
    scenario: &LossScenario,
    task: &TaskBatch,
    pairs: &PairBatch,
) -> Result<f64, Error> {
    check_batches(task, pairs)?;
    let mut total = 0.0;
    if !task.predictions.is_empty() {
        total += task_loss(task.predictions, task.targets)?;
    }
    if !pairs.pairs.is_empty() {
        total += scenario.lambda_sc * sc_batch_value(scenario.convention, pairs);
    }
    Ok(total)
}

/// Combined loss with gradients, ready to seed the network backward
/// pass. Batch averaging and the consistency weight are already folded
/// into the returned gradients.
#[derive(Debug, Clone)]
pub struct CombinedGrad {
    pub value: f64,
    /// Task term value, when the task batch is nonempty.
    pub task_value: Option<f64>,
    /// Unweighted consistency term value, when the pair batch is nonempty.
    pub sc_value: Option<f64>,
    /// Per-task-sample gradient with respect to the prediction.
    pub task_grads: Vec<[f64; 4]>,
    /// Per-pair gradients with respect to the endpoint predictions.
    pub pair_grads: Vec<([f64; 4], [f64; 4])>,
}

/// Evaluates the combined loss and its gradient with respect to every
/// prediction in both batches.
pub fn combined_loss_grad(
    scenario: &LossScenario,
    task: &TaskBatch,
    pairs: &PairBatch,
) -> Result<CombinedGrad, Error> {
    check_batches(task, pairs)?;
    let mut value = 0.0;
    let mut task_value = None;
    let mut task_grads = Vec::new();
    if !task.predictions.is_empty() {
        let (v, g) = task_loss_grad(task.predictions, task.targets)?;
        value += v;
        task_value = Some(v);
        task_grads = g;
    }
    let mut sc_value = None;
    let mut pair_grads = Vec::with_capacity(pairs.pairs.len());
    if !pairs.pairs.is_empty() {
        let scale = scenario.lambda_sc / pairs.pairs.len() as f64;
        let mut sum = 0.0;
        for (k, pair) in pairs.pairs.iter().enumerate() {
            let (v, gi, gj) = sc_pair_grad(
                scenario.convention,
                &pairs.pred_i[k],
                &pairs.pred_j[k],
                pair,
            );
            sum += v;
            pair_grads.push((
                [
                    gi[0] * scale,
                    gi[1] * scale,
                    gi[2] * scale,
                    gi[3] * scale,
                ],
                [
                    gj[0] * scale,
                    gj[1] * scale,
                    gj[2] * scale,
                    gj[3] * scale,
                ],
            ));
        }
        let mean = sum / pairs.pairs.len() as f64;
        sc_value = Some(mean);
        value += scenario.lambda_sc * mean;
    }
    Ok(CombinedGrad {
        value,
        task_value,
        sc_value,
        task_grads,
        pair_grads,
    })
}

/// Per-sequence pose information handed to pair construction. The
/// noisy drone track is only needed for the noisy-odometry mode, and
/// the subject track only when the subject mode is not `Unknown`.
#[derive(Debug, Clone, Copy)]
pub struct PairSource<'a> {
    pub timestamps: &'a [f64],
    /// True drone world poses, one per frame.
    pub drone_world: &'a [Pose4],
    /// Simulated noisy drone pose estimates, one per frame.
    pub drone_noisy: Option<&'a [Pose4]>,
    /// True subject world poses, one per frame.
    pub subject_world: Option<&'a [Pose4]>,
    /// Detected subject-still windows as half-open index ranges.
    pub still_windows: &'a [(usize, usize)],
}

impl PairSource<'_> {
    fn sample_period(&self) -> Result<f64, Error> {
        let n = self.timestamps.len();
        if n < 2 {
            return Err(Error::invalid("pair source", "sequence needs at least two frames"));
        }
        Ok((self.timestamps[n - 1] - self.timestamps[0]) / (n - 1) as f64)
    }
}

/// Builds the consistency pairs `(i, i + dt / period)` for a sequence
/// under a scenario. The odometry field follows the scenario's drone
/// mode and the subject field its subject mode. The still-subset
/// selector keeps only pairs whose endpoints fall inside one still
/// window (so the subject provably holds still across the pair) and
/// caps their number by a seeded uniform draw. A `dt` longer than the
/// sequence yields an empty list.
pub fn build_pairs(
    src: &PairSource,
    scenario: &LossScenario,
    seed: u64,
) -> Result<Vec<ConsistencyPair>, Error> {
    scenario.validate()?;
    if scenario.sc.is_empty() {
        return Ok(Vec::new());
    }
    let n = src.timestamps.len();
    if src.drone_world.len() != n {
        return Err(Error::invalid("pair source", "drone track length mismatch"));
    }
    let period = src.sample_period()?;
    if !(period > 0.0) {
        return Err(Error::invalid("pair source", "timestamps must increase"));
    }
    let offset_f = scenario.dt / period;
    let offset = offset_f.round() as usize;
    if offset < 1 || (offset_f - offset as f64).abs() > 1e-6 * offset_f.max(1.0) {
        return Err(Error::invalid(
            "pair construction",
            format!(
                "dt {} s is not a positive multiple of the sample period {} s",
                scenario.dt, period
            ),
        ));
    }

    let estimates: &[Pose4] = match scenario.drone {
        DroneMode::Absolute | DroneMode::Odometry => src.drone_world,
        DroneMode::NoisyOdometry => src
            .drone_noisy
            .ok_or_else(|| Error::invalid("pair source", "noisy odometry mode needs a noisy track"))?,
    };
    if estimates.len() != n {
        return Err(Error::invalid("pair source", "noisy track length mismatch"));
    }
    let subject: Option<&[Pose4]> = match scenario.subject {
        SubjectMode::Unknown => None,
        SubjectMode::Absolute | SubjectMode::Odometry => Some(
            src.subject_world
                .ok_or_else(|| Error::invalid("pair source", "subject mode needs a subject track"))?,
        ),
    };
    if let Some(track) = subject {
        if track.len() != n {
            return Err(Error::invalid("pair source", "subject track length mismatch"));
        }
    }

    let mut starts: Vec<usize> = match scenario.sc {
        SetSelector::All => (0..n.saturating_sub(offset)).collect(),
        SetSelector::Still { .. } => src
            .still_windows
            .iter()
            .flat_map(|&(lo, hi)| (lo..hi.saturating_sub(offset)).map(move |i| i))
            .filter(|&i| i + offset < n)
            .collect(),
        SetSelector::Empty => unreachable!(),
    };
    if let SetSelector::Still { max } = scenario.sc {
        if starts.len() > max {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            starts.shuffle(&mut rng);
            starts.truncate(max);
            starts.sort_unstable();
        }
    }

    Ok(starts
        .into_iter()
        .map(|i| {
            let j = i + offset;
            ConsistencyPair {
                i,
                j,
                odom: relpose(&estimates[i], &estimates[j]),
                subj_rel: match subject {
                    Some(track) => relpose(&track[i], &track[j]),
                    None => Pose4::IDENTITY,
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose4 {
        Pose4::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-3.0..3.0),
        )
    }

    #[test]
    fn task_loss_matches_hand_examples() {
        let t = [Pose4::new(0.0, 0.0, 0.0, 0.0)];
        assert_abs_diff_eq!(task_loss(&t, &t).unwrap(), 0.0);
        let p = [Pose4::new(1.0, 0.0, 0.0, 0.0)];
        assert_abs_diff_eq!(task_loss(&p, &t).unwrap(), 1.0);
        let meter = [Pose4::new(1.0, 0.0, 0.0, 0.0)];
        let radian = [Pose4::new(0.0, 0.0, 0.0, 1.0)];
        assert_abs_diff_eq!(
            task_loss(&meter, &t).unwrap(),
            task_loss(&radian, &t).unwrap()
        );
        let two = [Pose4::new(1.0, 0.0, 0.0, 0.0), Pose4::new(0.0, 0.0, 0.0, 0.0)];
        let zeros = [Pose4::IDENTITY, Pose4::IDENTITY];
        assert_abs_diff_eq!(task_loss(&two, &zeros).unwrap(), 0.5);
    }

    #[test]
    fn task_loss_rejects_empty_set() {
        assert!(task_loss(&[], &[]).is_err());
    }

    #[test]
    fn propagate_target_matches_hand_examples() {
        let known = Pose4::new(2.0, 0.0, 0.0, 0.0);
        let unchanged = propagate_target(&known, &Pose4::IDENTITY);
        assert_abs_diff_eq!(delta(&unchanged, &known), 0.0, epsilon = 1e-12);

        let advance = Pose4::new(1.0, 0.0, 0.0, 0.0);
        let moved = propagate_target(&known, &advance);
        assert_abs_diff_eq!(
            delta(&moved, &Pose4::new(1.0, 0.0, 0.0, 0.0)),
            0.0,
            epsilon = 1e-12
        );

        let spin = Pose4::new(0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let spun = propagate_target(&known, &spin);
        assert_abs_diff_eq!(
            delta(
                &spun,
                &Pose4::new(0.0, -2.0, 0.0, -std::f64::consts::FRAC_PI_2)
            ),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sc_loss_zero_on_hand_examples() {
        let id = Pose4::IDENTITY;
        assert_abs_diff_eq!(sc_loss(&id, &id, &id, &id), 0.0);
        let pred_i = Pose4::new(2.0, 0.0, 0.0, 0.0);
        let pred_j = Pose4::new(1.0, 0.0, 0.0, 0.0);
        let odom = Pose4::new(1.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(sc_loss(&pred_i, &pred_j, &odom, &id), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sc_loss_zero_at_ground_truth_for_random_states() {
        let mut r = rng(7);
        for _ in 0..300 {
            let d_i = random_pose(&mut r);
            let d_j = random_pose(&mut r);
            let h_i = random_pose(&mut r);
            let h_j = random_pose(&mut r);
            let pred_i = relpose(&d_i, &h_i);
            let pred_j = relpose(&d_j, &h_j);
            let odom = relpose(&d_i, &d_j);
            let subj_rel = relpose(&h_i, &h_j);
            let v = sc_loss(&pred_i, &pred_j, &odom, &subj_rel);
            assert!(v < 1e-9, "ground-truth chain not closed: {v}");
        }
    }

    #[test]
    fn inverted_convention_is_zero_at_the_inverse_target() {
        let mut r = rng(8);
        for _ in 0..100 {
            let d_i = random_pose(&mut r);
            let d_j = random_pose(&mut r);
            let h_i = random_pose(&mut r);
            let h_j = random_pose(&mut r);
            let pred_i = relpose(&d_i, &h_i);
            let pred_j = relpose(&d_j, &h_j);
            let odom = relpose(&d_i, &d_j);
            let subj_ji = relpose(&h_j, &h_i);
            let v = sc_loss_with(ScConvention::Inverted, &pred_i, &pred_j, &odom, &subj_ji);
            assert!(v < 1e-9, "inverted convention not closed: {v}");
        }
    }

    #[test]
    fn time_reversal_preserves_zero_loss() {
        let mut r = rng(9);
        for _ in 0..100 {
            let d_i = random_pose(&mut r);
            let d_j = random_pose(&mut r);
            let h_i = random_pose(&mut r);
            let h_j = random_pose(&mut r);
            let pair = ConsistencyPair {
                i: 0,
                j: 8,
                odom: relpose(&d_i, &d_j),
                subj_rel: relpose(&h_i, &h_j),
            };
            let pred_i = relpose(&d_i, &h_i);
            let pred_j = relpose(&d_j, &h_j);
            let fwd = sc_loss(&pred_i, &pred_j, &pair.odom, &pair.subj_rel);
            let rev = pair.time_reversed();
            let bwd = sc_loss(&pred_j, &pred_i, &rev.odom, &rev.subj_rel);
            assert!(fwd < 1e-9 && bwd < 1e-9, "reversal broke consistency");
            let back = rev.time_reversed();
            assert_eq!((back.i, back.j), (pair.i, pair.j));
            assert!(delta(&back.odom, &pair.odom) < 1e-12);
            assert!(delta(&back.subj_rel, &pair.subj_rel) < 1e-12);
        }
    }

    #[test]
    fn combined_loss_adds_terms_and_omits_empty_ones() {
        let scenario = LossScenario {
            task: SetSelector::All,
            sc: SetSelector::All,
            ..LossScenario::ideal()
        };
        let preds = [Pose4::new(0.3, 0.0, 0.0, 0.0)];
        let targets = [Pose4::IDENTITY];
        let task = TaskBatch {
            predictions: &preds,
            targets: &targets,
        };
        let pair = [ConsistencyPair {
            i: 0,
            j: 1,
            odom: Pose4::IDENTITY,
            subj_rel: Pose4::IDENTITY,
        }];
        let pi = [Pose4::new(0.2, 0.0, 0.0, 0.0)];
        let pj = [Pose4::IDENTITY];
        let pairs = PairBatch {
            pred_i: &pi,
            pred_j: &pj,
            pairs: &pair,
        };
        // chain = invert(pred_i) * identity * pred_j has x = -0.2.
        assert_abs_diff_eq!(
            combined_loss(&scenario, &task, &pairs).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            combined_loss(&scenario, &task, &PairBatch::EMPTY).unwrap(),
            0.3,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            combined_loss(&scenario, &TaskBatch::EMPTY, &pairs).unwrap(),
            0.2,
            epsilon = 1e-12
        );
        assert!(combined_loss(&scenario, &TaskBatch::EMPTY, &PairBatch::EMPTY).is_err());
    }

    #[test]
    fn lambda_scales_only_the_consistency_term() {
        let mut r = rng(11);
        let preds: Vec<Pose4> = (0..4).map(|_| random_pose(&mut r)).collect();
        let targets: Vec<Pose4> = (0..4).map(|_| random_pose(&mut r)).collect();
        let pair_list: Vec<ConsistencyPair> = (0..3)
            .map(|k| ConsistencyPair {
                i: k,
                j: k + 2,
                odom: random_pose(&mut r),
                subj_rel: random_pose(&mut r),
            })
            .collect();
        let pi: Vec<Pose4> = (0..3).map(|_| random_pose(&mut r)).collect();
        let pj: Vec<Pose4> = (0..3).map(|_| random_pose(&mut r)).collect();
        let task = TaskBatch {
            predictions: &preds,
            targets: &targets,
        };
        let pairs = PairBatch {
            pred_i: &pi,
            pred_j: &pj,
            pairs: &pair_list,
        };
        let at = |lambda: f64| {
            let scenario = LossScenario {
                task: SetSelector::All,
                sc: SetSelector::All,
                lambda_sc: lambda,
                ..LossScenario::ideal()
            };
            combined_loss(&scenario, &task, &pairs).unwrap()
        };
        let base = at(0.0);
        let unit = at(1.0) - base;
        for lambda in [0.25, 0.5, 2.0, 5.0] {
            assert_abs_diff_eq!(at(lambda) - base, lambda * unit, epsilon = 1e-12);
        }
    }

    /// Central-difference gradient of the combined loss with respect to
    /// one pose component.
    fn fd_slope(f: &dyn Fn(&[Pose4]) -> f64, poses: &[Pose4], idx: usize, comp: usize) -> f64 {
        let eps = 1e-6;
        let mut hi = poses.to_vec();
        let mut lo = poses.to_vec();
        let mut a_hi = hi[idx].as_array();
        let mut a_lo = lo[idx].as_array();
        a_hi[comp] += eps;
        a_lo[comp] -= eps;
        hi[idx] = Pose4::from_array(a_hi);
        lo[idx] = Pose4::from_array(a_lo);
        (f(&hi) - f(&lo)) / (2.0 * eps)
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let mut r = rng(13);
        for _ in 0..20 {
            let n_t = 3;
            let n_p = 2;
            let targets: Vec<Pose4> = (0..n_t).map(|_| random_pose(&mut r)).collect();
            let pair_list: Vec<ConsistencyPair> = (0..n_p)
                .map(|k| ConsistencyPair {
                    i: k,
                    j: k + 1,
                    odom: random_pose(&mut r),
                    subj_rel: random_pose(&mut r),
                })
                .collect();
            // One flat pose vector: task predictions, then pair i then
            // pair j endpoints. Random poses land away from the loss
            // kinks with probability one.
            let flat: Vec<Pose4> = (0..n_t + 2 * n_p).map(|_| random_pose(&mut r)).collect();
            let scenario = LossScenario {
                task: SetSelector::All,
                sc: SetSelector::All,
                lambda_sc: 0.7,
                ..LossScenario::ideal()
            };
            let eval = |poses: &[Pose4]| {
                let task = TaskBatch {
                    predictions: &poses[..n_t],
                    targets: &targets,
                };
                let pairs = PairBatch {
                    pred_i: &poses[n_t..n_t + n_p],
                    pred_j: &poses[n_t + n_p..],
                    pairs: &pair_list,
                };
                combined_loss(&scenario, &task, &pairs).unwrap()
            };
            let task = TaskBatch {
                predictions: &flat[..n_t],
                targets: &targets,
            };
            let pairs = PairBatch {
                pred_i: &flat[n_t..n_t + n_p],
                pred_j: &flat[n_t + n_p..],
                pairs: &pair_list,
            };
            let out = combined_loss_grad(&scenario, &task, &pairs).unwrap();
            for idx in 0..flat.len() {
                let analytic: [f64; 4] = if idx < n_t {
                    out.task_grads[idx]
                } else if idx < n_t + n_p {
                    out.pair_grads[idx - n_t].0
                } else {
                    out.pair_grads[idx - n_t - n_p].1
                };
                for comp in 0..4 {
                    let fd = fd_slope(&eval, &flat, idx, comp);
                    let rel = (analytic[comp] - fd).abs()
                        / analytic[comp].abs().max(fd.abs()).max(1e-2);
                    assert!(
                        rel < 1e-4,
                        "gradient mismatch at pose {idx} comp {comp}: analytic {} fd {fd}",
                        analytic[comp]
                    );
                }
            }
        }
    }

    fn uniform_track(n: usize, rng: &mut ChaCha8Rng) -> Vec<Pose4> {
        (0..n).map(|_| random_pose(rng)).collect()
    }

    #[test]
    fn build_pairs_counts_match_hand_derivation() {
        let mut r = rng(17);
        let n = 512;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.25).collect();
        let drone = uniform_track(n, &mut r);
        let subject = uniform_track(n, &mut r);
        let src = PairSource {
            timestamps: &times,
            drone_world: &drone,
            drone_noisy: None,
            subject_world: Some(&subject),
            still_windows: &[],
        };
        let scenario = LossScenario::sc_all(DroneMode::Odometry, SubjectMode::Odometry, 2.0);
        let pairs = build_pairs(&src, &scenario, 0).unwrap();
        assert_eq!(pairs.len(), 504);
        assert_eq!((pairs[0].i, pairs[0].j), (0, 8));
        assert_eq!((pairs[503].i, pairs[503].j), (503, 511));

        let whole = LossScenario::sc_all(DroneMode::Odometry, SubjectMode::Odometry, 128.0);
        assert!(build_pairs(&src, &whole, 0).unwrap().is_empty());

        let off_grid = LossScenario::sc_all(DroneMode::Odometry, SubjectMode::Odometry, 0.3);
        assert!(build_pairs(&src, &off_grid, 0).is_err());
    }

    #[test]
    fn build_pairs_fills_fields_per_scenario_modes() {
        let mut r = rng(19);
        let n = 32;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.25).collect();
        let drone = uniform_track(n, &mut r);
        let noisy = uniform_track(n, &mut r);
        let subject = uniform_track(n, &mut r);
        let src = PairSource {
            timestamps: &times,
            drone_world: &drone,
            drone_noisy: Some(&noisy),
            subject_world: Some(&subject),
            still_windows: &[],
        };
        let exact = LossScenario::sc_all(DroneMode::Odometry, SubjectMode::Odometry, 1.0);
        let got = build_pairs(&src, &exact, 0).unwrap();
        let k = 5;
        assert_abs_diff_eq!(
            delta(&got[k].odom, &relpose(&drone[k], &drone[k + 4])),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            delta(&got[k].subj_rel, &relpose(&subject[k], &subject[k + 4])),
            0.0,
            epsilon = 1e-12
        );

        let blind = LossScenario::sc_all(DroneMode::NoisyOdometry, SubjectMode::Unknown, 1.0);
        let got = build_pairs(&src, &blind, 0).unwrap();
        assert_abs_diff_eq!(
            delta(&got[k].odom, &relpose(&noisy[k], &noisy[k + 4])),
            0.0,
            epsilon = 1e-12
        );
        assert_eq!(got[k].subj_rel, Pose4::IDENTITY);

        let no_track = PairSource {
            drone_noisy: None,
            ..src
        };
        assert!(build_pairs(&no_track, &blind, 0).is_err());
    }

    #[test]
    fn still_selector_keeps_pairs_inside_windows_and_caps_them() {
        let mut r = rng(23);
        let n = 512;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.25).collect();
        let drone = uniform_track(n, &mut r);
        let subject = uniform_track(n, &mut r);
        let windows = [(40usize, 100usize), (200, 260), (350, 480)];
        let src = PairSource {
            timestamps: &times,
            drone_world: &drone,
            drone_noisy: None,
            subject_world: Some(&subject),
            still_windows: &windows,
        };
        let mut scenario = LossScenario::sc_all(DroneMode::Odometry, SubjectMode::Odometry, 2.0);
        scenario.sc = SetSelector::Still { max: 128 };
        let pairs = build_pairs(&src, &scenario, 42).unwrap();
        assert_eq!(pairs.len(), 128);
        for p in &pairs {
            assert!(
                windows.iter().any(|&(lo, hi)| p.i >= lo && p.j < hi),
                "pair ({}, {}) escapes the still windows",
                p.i,
                p.j
            );
        }
        let again = build_pairs(&src, &scenario, 42).unwrap();
        assert_eq!(pairs, again);
        let other = build_pairs(&src, &scenario, 43).unwrap();
        assert_ne!(pairs, other);

        // A window shorter than dt contributes nothing.
        let tight = PairSource {
            still_windows: &[(10, 14)],
            ..src
        };
        assert!(build_pairs(&tight, &scenario, 0).unwrap().is_empty());
    }

    #[test]
    fn scenario_labels_round_trip() {
        let cases = [
            ("t(a)", LossScenario::ideal()),
            (
                "sc(a,dD~,H?)",
                LossScenario::sc_all(DroneMode::NoisyOdometry, SubjectMode::Unknown, 2.0),
            ),
            (
                "sc(a,dD,dH)",
                LossScenario::sc_all(DroneMode::Odometry, SubjectMode::Odometry, 2.0),
            ),
            ("t(s32)+sc(s128,dD~,H?)", LossScenario::still_protocol(2.0)),
        ];
        for (label, scenario) in cases {
            assert_eq!(scenario.label(), label);
            let parsed = LossScenario::from_label(label, 2.0, 1.0).unwrap();
            assert_eq!(parsed, scenario);
        }
        assert!(LossScenario::from_label("x(a)", 2.0, 1.0).is_err());
        assert!(LossScenario::from_label("sc(a,dD)", 2.0, 1.0).is_err());
        assert!(LossScenario::from_label("t(a)+t(a)", 2.0, 1.0).is_err());
        assert!(LossScenario::from_label("", 2.0, 1.0).is_err());
    }

    #[test]
    fn sc_is_zero_over_a_whole_consistent_sequence() {
        // Smooth random walks for drone and subject; predictions from
        // ground truth must close the chain for every pair.
        let mut r = rng(29);
        let n = 64;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.25).collect();
        let mut drone = vec![Pose4::IDENTITY];
        let mut subject = vec![Pose4::new(2.0, 0.0, 0.0, 0.0)];
        for _ in 1..n {
            let step = Pose4::new(
                r.gen_range(-0.1..0.1),
                r.gen_range(-0.1..0.1),
                r.gen_range(-0.02..0.02),
                r.gen_range(-0.1..0.1),
            );
            drone.push(drone.last().unwrap().compose(&step));
            let hstep = Pose4::new(
                r.gen_range(-0.05..0.05),
                r.gen_range(-0.05..0.05),
                0.0,
                r.gen_range(-0.05..0.05),
            );
            subject.push(subject.last().unwrap().compose(&hstep));
        }
        let src = PairSource {
            timestamps: &times,
            drone_world: &drone,
            drone_noisy: None,
            subject_world: Some(&subject),
            still_windows: &[],
        };
        let scenario = LossScenario::sc_all(DroneMode::Odometry, SubjectMode::Odometry, 2.0);
        let pairs = build_pairs(&src, &scenario, 0).unwrap();
        assert_eq!(pairs.len(), 56);
        let pred_i: Vec<Pose4> = pairs
            .iter()
            .map(|p| relpose(&drone[p.i], &subject[p.i]))
            .collect();
        let pred_j: Vec<Pose4> = pairs
            .iter()
            .map(|p| relpose(&drone[p.j], &subject[p.j]))
            .collect();
        let batch = PairBatch {
            pred_i: &pred_i,
            pred_j: &pred_j,
            pairs: &pairs,
        };
        let total = combined_loss(&scenario, &TaskBatch::EMPTY, &batch).unwrap();
        assert!(total < 1e-9, "consistent sequence scored {total}");
    }
}
