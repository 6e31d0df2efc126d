//! Desk-scale testbed for self-supervised, on-device fine-tuning of a
//! pose-regression CNN.
//!
//! A small camera-equipped robot carries a network that maps a grayscale
//! frame to the 4-DOF relative pose of a person (x, y, z, yaw). Deployed in a
//! new environment, the network degrades; this crate implements everything
//! needed to study fine-tuning it in the field from the robot's own data:
//!
//! - [`pose`]: planar-rotation 4-DOF pose algebra (compose / invert / delta).
//! - [`nn`]: a from-scratch CNN engine (conv / batch norm / relu / max pool /
//!   fully connected) whose backward pass honours selective parameter-update
//!   strategies and retains only the activations those strategies need.
//! - [`loss`]: supervised task loss plus a state-consistency loss that
//!   couples pairs of predictions through ego-motion, with label-free
//!   scenario variants.
//! - [`odom`]: drifting odometry simulation for pose estimates.
//! - [`data`]: flight-sequence records on disk, a synthetic scene generator,
//!   photometric augmentation, fine-tuning set acquisition, and still-subject
//!   detection.
//! - [`train`]: Adam, pretraining and fine-tuning loops, cross-validation
//!   plans.
//! - [`metrics`]: MAE and R² with yaw treated circularly.
//! - [`cost`]: analytic per-frame compute and memory model of the engine's
//!   workload, with SoC time projections.
//!
//! Everything is deterministic under a seed: same inputs, bit-identical
//! outputs.

pub mod cost;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod odom;
pub mod pose;
pub mod train;

pub use data::FlightRecord;
pub use error::Error;
pub use loss::LossScenario;
pub use pose::Pose4;

/// Crate version, recorded in output manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
