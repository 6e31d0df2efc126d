//! From-scratch CNN training engine with selective-update awareness.
//!
//! The engine is generic over the scalar type: experiments run in `f32`
//! (matching the deployment target), gradient verification runs the same
//! code in `f64` against central finite differences.
//!
//! Reductions that are sensitive to accumulation order (batch-norm
//! statistics, gradient sums) accumulate in `f64` regardless of the scalar
//! type, in a fixed sequential order, so results are bit-reproducible.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub mod arch;
pub mod engine;
pub mod gradcheck;
pub mod params;
pub mod serial;
pub mod strategy;

pub use arch::{ArchDescriptor, InputSpec, LayerSpec, LayerShapes, Shape, POSE_OUTPUTS};
pub use engine::{
    backward, count_selected_params, forward, infer, ActivationCache, Batch, GradStore,
    GradTensor, Mode, Predictions, BN_EPS,
};
pub use params::{ModelParams, ParamRole, ParamTensor};
pub use serial::{load_model, save_model};
pub use strategy::{BnMode, UpdateStrategy};

/// Scalar the engine runs on: `f32` for experiments, `f64` for gradient
/// verification.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Debug + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn into_f64(self) -> f64 {
        self
    }
}
