//! Turns a flight sequence plus a loss scenario into concrete
//! fine-tuning inputs: frames, labeled task samples, and consistency
//! pairs.
//!
//! The odometry track is simulated over the full native-rate flight
//! before the acquisition subset is taken, so drift accumulates at the
//! rate the sensors actually run at, not at the acquisition rate.
//!
//! Task labels under the cooperative still-subject protocol are not
//! read off the ground truth: each still window is anchored at its
//! first frame, where the relative pose is assumed measured once, and
//! labels for the rest of the window are propagated through the
//! scenario's own odometry estimate. With exact odometry this
//! reproduces the true labels; with noisy odometry the labels carry
//! the drift, exactly as they would in the field.

use crate::data::{detect_still, select, FlightRecord, Image};
use crate::error::Error;
use crate::loss::{
    build_pairs, propagate_target, ConsistencyPair, DroneMode, LossScenario, PairSource,
    SetSelector, TaskSample,
};
use crate::odom::{simulate, OdomNoiseParams};
use crate::pose::{relpose, Pose4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Subject speed bound for still detection, meters per second.
pub const STILL_SPEED_MAX: f64 = 0.1;

/// Minimum still duration before a frame counts as still, seconds.
pub const STILL_MIN_SECONDS: f64 = 1.0;

/// Everything one fine-tuning run consumes, with indices local to
/// `images`.
#[derive(Debug, Clone)]
pub struct FinetuneData {
    pub images: Vec<Image>,
    pub task: Vec<TaskSample>,
    pub pairs: Vec<ConsistencyPair>,
    pub still_windows: Vec<(usize, usize)>,
}

impl FinetuneData {
    pub fn is_empty(&self) -> bool {
        self.task.is_empty() && self.pairs.is_empty()
    }
}

/// Assembles the fine-tuning inputs for the acquired subset `indices`
/// of `seq` under `scenario`. `noise` drives the simulated odometry
/// track used wherever the scenario asks for noisy estimates.
pub fn assemble(
    seq: &[FlightRecord],
    indices: &[usize],
    scenario: &LossScenario,
    noise: &OdomNoiseParams,
    seed: u64,
) -> Result<FinetuneData, Error> {
    scenario.validate()?;
    if indices.len() < 2 {
        return Err(Error::invalid("scenario", "need at least two acquired frames"));
    }
    let records = select(seq, indices);
    let full_drone: Vec<Pose4> = seq.iter().map(|r| r.drone_world).collect();
    let noisy_full = simulate(&full_drone, noise)?;
    let noisy: Vec<Pose4> = indices.iter().map(|&i| noisy_full[i]).collect();
    let timestamps: Vec<f64> = records.iter().map(|r| r.timestamp).collect();
    let drone_world: Vec<Pose4> = records.iter().map(|r| r.drone_world).collect();
    let subject_world: Vec<Pose4> = records.iter().map(|r| r.subject_world).collect();
    let still_windows = detect_still(&records, STILL_SPEED_MAX, STILL_MIN_SECONDS);

    let drone_estimates: &[Pose4] = match scenario.drone {
        DroneMode::Absolute | DroneMode::Odometry => &drone_world,
        DroneMode::NoisyOdometry => &noisy,
    };

    let task = match scenario.task {
        SetSelector::Empty => Vec::new(),
        SetSelector::All => records
            .iter()
            .enumerate()
            .map(|(k, r)| TaskSample {
                index: k,
                target: r.relative_pose(),
            })
            .collect(),
        SetSelector::Still { max } => {
            if still_windows.is_empty() {
                return Err(Error::invalid(
                    "scenario",
                    "no still-subject windows: the still-protocol task set is infeasible here",
                ));
            }
            let mut chosen: Vec<usize> = still_windows
                .iter()
                .flat_map(|&(lo, hi)| lo..hi)
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c);
            chosen.shuffle(&mut rng);
            chosen.truncate(max);
            chosen.sort_unstable();
            chosen
                .into_iter()
                .map(|k| {
                    let (lo, _) = still_windows
                        .iter()
                        .find(|&&(lo, hi)| lo <= k && k < hi)
                        .copied()
                        .expect("chosen index came from a window");
                    let known = records[lo].relative_pose();
                    let odom = relpose(&drone_estimates[lo], &drone_estimates[k]);
                    TaskSample {
                        index: k,
                        target: propagate_target(&known, &odom),
                    }
                })
                .collect()
        }
    };

    let src = PairSource {
        timestamps: &timestamps,
        drone_world: &drone_world,
        drone_noisy: Some(&noisy),
        subject_world: Some(&subject_world),
        still_windows: &still_windows,
    };
    let pairs = build_pairs(&src, scenario, seed ^ 0x9a17)?;
    if task.is_empty() && pairs.is_empty() {
        return Err(Error::invalid(
            "scenario",
            "scenario produced neither task samples nor consistency pairs",
        ));
    }

    let images = records.into_iter().map(|r| r.image).collect();
    Ok(FinetuneData {
        images,
        task,
        pairs,
        still_windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_sequence;
    use crate::data::DomainSpec;
    use crate::loss::SubjectMode;
    use crate::pose::delta;

    fn short_sequence() -> Vec<FlightRecord> {
        synth_sequence(&DomainSpec::domain_a(), "s1", 160, 77).unwrap()
    }

    #[test]
    fn ideal_scenario_takes_every_frame_with_exact_labels() {
        let seq = short_sequence();
        let indices: Vec<usize> = (0..seq.len()).collect();
        let data = assemble(
            &seq,
            &indices,
            &LossScenario::ideal(),
            &OdomNoiseParams::exact(),
            3,
        )
        .unwrap();
        assert_eq!(data.task.len(), seq.len());
        assert!(data.pairs.is_empty());
        for s in &data.task {
            assert!(delta(&s.target, &seq[s.index].relative_pose()) < 1e-12);
        }
    }

    #[test]
    fn consistency_scenario_builds_pairs_with_noisy_odometry() {
        let seq = short_sequence();
        let indices: Vec<usize> = (0..seq.len()).collect();
        let scenario = LossScenario::sc_all(
            DroneMode::NoisyOdometry,
            SubjectMode::Unknown,
            2.0,
        );
        let noise = OdomNoiseParams::default().with_seed(5);
        let data = assemble(&seq, &indices, &scenario, &noise, 3).unwrap();
        assert!(data.task.is_empty());
        assert!(!data.pairs.is_empty());
        // Noisy odometry differs from the exact relative motion for at
        // least some pairs, and the unknown subject is the identity.
        let mut any_noise = false;
        for p in &data.pairs {
            let exact = relpose(&seq[p.i].drone_world, &seq[p.j].drone_world);
            if delta(&p.odom, &exact) > 1e-9 {
                any_noise = true;
            }
            assert_eq!(p.subj_rel, Pose4::IDENTITY);
        }
        assert!(any_noise);
    }

    #[test]
    fn still_protocol_propagates_labels_inside_windows() {
        let seq = short_sequence();
        let indices: Vec<usize> = (0..seq.len()).collect();
        let mut scenario = LossScenario::still_protocol(2.0);
        scenario.drone = DroneMode::Odometry;
        let data = assemble(&seq, &indices, &scenario, &OdomNoiseParams::exact(), 3).unwrap();
        assert_eq!(data.task.len(), 32);
        for s in &data.task {
            let (lo, _) = data
                .still_windows
                .iter()
                .copied()
                .find(|&(lo, hi)| lo <= s.index && s.index < hi)
                .unwrap_or_else(|| panic!("task sample {} outside still windows", s.index));
            // With exact odometry the propagated label equals the pose
            // of the anchor-position subject seen from the current
            // drone pose, bit for bit in the algebra's terms.
            let anchored = relpose(&seq[s.index].drone_world, &seq[lo].subject_world);
            assert!(delta(&s.target, &anchored) < 1e-9);
            // Against the true label it can be off only by the creep
            // the detector's speed tolerance admits at a window edge:
            // under one sample step of sub-threshold motion.
            let drift = delta(&s.target, &seq[s.index].relative_pose());
            assert!(drift < 0.1, "label drift {drift} exceeds the creep tolerance");
        }
        assert!(!data.pairs.is_empty());
    }

    #[test]
    fn noisy_still_labels_deviate_but_stay_close() {
        let seq = short_sequence();
        let indices: Vec<usize> = (0..seq.len()).collect();
        let scenario = LossScenario::still_protocol(2.0);
        let noise = OdomNoiseParams::default().with_seed(9);
        let data = assemble(&seq, &indices, &scenario, &noise, 3).unwrap();
        let mut any_dev = false;
        for s in &data.task {
            let err = delta(&s.target, &seq[s.index].relative_pose());
            if err > 1e-9 {
                any_dev = true;
            }
            assert!(err < 1.0, "propagated label drifted implausibly far: {err}");
        }
        assert!(any_dev);
    }

    #[test]
    fn still_protocol_without_still_frames_is_infeasible() {
        // A subject that never stops: walk it along x at every frame.
        let mut seq = short_sequence();
        for (k, r) in seq.iter_mut().enumerate() {
            r.subject_world = Pose4::new(2.0 + 0.2 * k as f64, 0.0, 0.0, 0.0);
        }
        let indices: Vec<usize> = (0..seq.len()).collect();
        let scenario = LossScenario::still_protocol(2.0);
        let err = assemble(&seq, &indices, &scenario, &OdomNoiseParams::exact(), 3);
        assert!(err.is_err());
        assert!(format!("{}", err.unwrap_err()).contains("infeasible"));
    }

    #[test]
    fn assembly_is_deterministic() {
        let seq = short_sequence();
        let indices: Vec<usize> = (0..seq.len()).collect();
        let scenario = LossScenario::still_protocol(2.0);
        let noise = OdomNoiseParams::default().with_seed(4);
        let a = assemble(&seq, &indices, &scenario, &noise, 8).unwrap();
        let b = assemble(&seq, &indices, &scenario, &noise, 8).unwrap();
        assert_eq!(a.task, b.task);
        assert_eq!(a.pairs, b.pairs);
    }
}
