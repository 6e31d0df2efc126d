//! Flight data: on-disk sequences, synthetic scene generation,
//! augmentation, fine-tuning set acquisition, and still-subject
//! detection.
//!
//! A sequence is an ordered list of [`FlightRecord`]s captured at a
//! nominal 4 Hz: a grayscale camera frame plus the world poses of the
//! drone and of the human subject at that instant. The supervised
//! regression target of a record is the subject pose expressed in the
//! drone frame, `relpose(drone_world, subject_world)`.

pub mod acquire;
pub mod augment;
pub mod image;
pub mod io;
pub mod synth;

pub use acquire::{acquire_finetune_set, detect_still, detect_still_track, select, AcquiredSplit, FinetuneSetSpec};
pub use augment::{augment, reverse_pairs, AugmentConfig};
pub use image::Image;
pub use io::{load_sequence, save_sequence};
pub use synth::{synth_generate, synth_sequence, CameraIntrinsics, DomainSpec};

use crate::pose::{relpose, Pose4};

/// One captured frame with its pose annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightRecord {
    /// Capture time in seconds from an arbitrary epoch. Strictly
    /// increasing within a sequence.
    pub timestamp: f64,
    /// Grayscale camera frame, 96 rows by 160 columns.
    pub image: Image,
    /// Drone pose in the world frame.
    pub drone_world: Pose4,
    /// Subject pose in the world frame.
    pub subject_world: Pose4,
    /// Identifier of the person in frame, used for cross-validation
    /// splits. Must not contain whitespace.
    pub subject_id: String,
}

/// Expected image height of a flight record frame.
pub const FRAME_HEIGHT: usize = 96;
/// Expected image width of a flight record frame.
pub const FRAME_WIDTH: usize = 160;

impl FlightRecord {
    /// The regression target: subject pose relative to the drone.
    pub fn relative_pose(&self) -> Pose4 {
        relpose(&self.drone_world, &self.subject_world)
    }
}

/// Validates the sequence invariants shared by the loader and the
/// generator: frame shape and strictly increasing timestamps.
pub(crate) fn check_sequence(records: &[FlightRecord]) -> Result<(), crate::error::Error> {
    for (row, r) in records.iter().enumerate() {
        if r.image.height() != FRAME_HEIGHT || r.image.width() != FRAME_WIDTH {
            return Err(crate::error::Error::invalid(
                "sequence",
                format!(
                    "record {row}: frame is {}x{}, expected {FRAME_HEIGHT}x{FRAME_WIDTH}",
                    r.image.height(),
                    r.image.width()
                ),
            ));
        }
        if row > 0 && r.timestamp <= records[row - 1].timestamp {
            return Err(crate::error::Error::invalid(
                "sequence",
                format!("record {row}: timestamps must strictly increase"),
            ));
        }
    }
    Ok(())
}
