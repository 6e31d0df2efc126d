//! Analytic per-frame compute and memory accounting for training the
//! network on an embedded target, plus wall-time projection on SoC
//! profiles.
//!
//! The model and the engine share one needs-analysis, so the activation
//! numbers here are exactly what [`crate::nn::ActivationCache`] measures —
//! that equality is tested, not assumed.
//!
//! Conventions, chosen to mirror the deployed training runtime and kept
//! consistent everywhere:
//! - MACs count multiply-accumulates only. Convolution forward costs
//!   `out_elems * k^2 * in_ch`; a fully connected layer costs `in * out`.
//!   Bias adds, relu, pooling, and the normalization forward (folded into
//!   the preceding convolution on-target) count zero.
//! - Backward: a selected convolution weight gradient costs the same as its
//!   forward pass; the input gradient through a convolution costs
//!   `in_elems * k^2 * out_ch` (the dense transposed convolution the
//!   target runs). A fully connected layer costs `in * out` for either
//!   direction. Normalization backward is counted per element: scale
//!   gradient one MAC, input gradient two MACs with batch statistics (one
//!   when frozen), shift gradient zero.
//! - Retained activations are counted in scalar elements ("units"); the
//!   target stores one byte per element, so thousands of units are KB
//!   there, while this engine's f32 buffers take four bytes per unit.
//!   Bit-packed relu masks and pool argmax tables are bookkeeping, not
//!   retained activations, and count zero units.

use crate::error::Result;
use crate::nn::arch::{ArchDescriptor, LayerSpec};
use crate::nn::engine::analyze;
use crate::nn::strategy::{BnMode, UpdateStrategy};

/// Trainable parameter counts by role family. Running statistics are
/// tracked separately: they ride along with the model but are never
/// gradient-updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCensus {
    pub conv_weight: u64,
    pub conv_bias: u64,
    pub norm_affine: u64,
    pub fc_weight: u64,
    pub fc_bias: u64,
    pub norm_running: u64,
}

impl ParamCensus {
    /// All gradient-updatable parameters.
    pub fn trainable(&self) -> u64 {
        self.conv_weight + self.conv_bias + self.norm_affine + self.fc_weight + self.fc_bias
    }
}

pub fn param_census(arch: &ArchDescriptor) -> Result<ParamCensus> {
    let shapes = arch.shapes()?;
    let mut c = ParamCensus {
        conv_weight: 0,
        conv_bias: 0,
        norm_affine: 0,
        fc_weight: 0,
        fc_bias: 0,
        norm_running: 0,
    };
    for (li, layer) in arch.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Conv2d { out_channels, kernel, bias, .. } => {
                let (ic, ..) = shapes.input[li].map_dims()?;
                c.conv_weight += (out_channels * ic * kernel * kernel) as u64;
                if bias {
                    c.conv_bias += out_channels as u64;
                }
            }
            LayerSpec::BatchNorm { channels } => {
                c.norm_affine += 2 * channels as u64;
                c.norm_running += 2 * channels as u64;
            }
            LayerSpec::FullyConnected { out_features } => {
                let in_features = shapes.input[li].elems();
                c.fc_weight += (in_features * out_features) as u64;
                c.fc_bias += out_features as u64;
            }
            _ => {}
        }
    }
    Ok(c)
}

/// Parameters the strategy would update.
pub fn selected_param_count(arch: &ArchDescriptor, strategy: &UpdateStrategy) -> Result<u64> {
    use crate::nn::params::ParamRole::*;
    let c = param_census(arch)?;
    let mut total = 0;
    if strategy.selects(ConvWeight) {
        total += c.conv_weight;
    }
    if strategy.selects(ConvBias) {
        total += c.conv_bias;
    }
    if strategy.selects(BnGamma) {
        total += c.norm_affine / 2;
    }
    if strategy.selects(BnBeta) {
        total += c.norm_affine / 2;
    }
    if strategy.selects(FcWeight) {
        total += c.fc_weight;
    }
    if strategy.selects(FcBias) {
        total += c.fc_bias;
    }
    Ok(total)
}

/// Forward MACs per frame, by layer (zero for non-MAC layers).
pub fn forward_macs_by_layer(arch: &ArchDescriptor) -> Result<Vec<u64>> {
    let shapes = arch.shapes()?;
    let mut macs = Vec::with_capacity(arch.layers.len());
    for (li, layer) in arch.layers.iter().enumerate() {
        macs.push(match *layer {
            LayerSpec::Conv2d { kernel, .. } => {
                let (ic, ..) = shapes.input[li].map_dims()?;
                let out_elems = shapes.output[li].elems();
                (out_elems * kernel * kernel * ic) as u64
            }
            LayerSpec::FullyConnected { out_features } => {
                (shapes.input[li].elems() * out_features) as u64
            }
            _ => 0,
        });
    }
    Ok(macs)
}

/// Forward MACs per frame.
pub fn forward_macs(arch: &ArchDescriptor) -> Result<u64> {
    Ok(forward_macs_by_layer(arch)?.iter().sum())
}

/// Per-frame cost of one training step under a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainStepCost {
    pub forward_macs: u64,
    /// Gradients of selected parameters (conv and fc weights, norm scales).
    pub weight_grad_macs: u64,
    /// Gradient propagation toward the input through conv, fc, and norm
    /// layers that still have selected parameters below them.
    pub input_grad_macs: u64,
    /// Retained activation values, in scalar elements per frame.
    pub activation_units: u64,
    pub updated_params: u64,
}

impl TrainStepCost {
    pub fn backward_macs(&self) -> u64 {
        self.weight_grad_macs + self.input_grad_macs
    }

    pub fn total_macs(&self) -> u64 {
        self.forward_macs + self.backward_macs()
    }

    /// Bytes this engine's f32 cache holds per frame for the retained
    /// activation values.
    pub fn activation_bytes_f32(&self) -> u64 {
        self.activation_units * 4
    }

    /// The target's storage convention: one byte per retained element.
    pub fn activation_kb_on_target(&self) -> f64 {
        self.activation_units as f64 / 1000.0
    }
}

pub fn train_step_cost(arch: &ArchDescriptor, strategy: &UpdateStrategy) -> Result<TrainStepCost> {
    use crate::nn::params::ParamRole::*;
    let shapes = arch.shapes()?;
    let needs = analyze(arch, strategy);
    let mut cost = TrainStepCost {
        forward_macs: forward_macs(arch)?,
        weight_grad_macs: 0,
        input_grad_macs: 0,
        activation_units: 0,
        updated_params: selected_param_count(arch, strategy)?,
    };
    for (li, layer) in arch.layers.iter().enumerate() {
        let need = needs[li];
        let in_elems = shapes.input[li].elems() as u64;
        let out_elems = shapes.output[li].elems() as u64;
        if need.retain_input {
            cost.activation_units += in_elems;
        }
        match *layer {
            LayerSpec::Conv2d { out_channels, kernel, .. } => {
                let (ic, ..) = shapes.input[li].map_dims()?;
                let k2 = (kernel * kernel) as u64;
                if strategy.selects(ConvWeight) {
                    cost.weight_grad_macs += out_elems * k2 * ic as u64;
                }
                if need.below_wants {
                    cost.input_grad_macs += in_elems * k2 * out_channels as u64;
                }
            }
            LayerSpec::BatchNorm { channels } => {
                if need.retain_affine {
                    cost.activation_units += 2 * channels as u64;
                }
                if strategy.selects(BnGamma) {
                    cost.weight_grad_macs += out_elems;
                }
                if need.below_wants {
                    cost.input_grad_macs += match strategy.bn_mode() {
                        BnMode::Batch => 2 * out_elems,
                        BnMode::Frozen => out_elems,
                    };
                }
            }
            LayerSpec::FullyConnected { out_features } => {
                let macs = in_elems * out_features as u64;
                if strategy.selects(FcWeight) {
                    cost.weight_grad_macs += macs;
                }
                if need.below_wants {
                    cost.input_grad_macs += macs;
                }
            }
            _ => {}
        }
    }
    Ok(cost)
}

/// A target processor for wall-time projection: clock, calibrated
/// effective throughput (not the datasheet peak), and a multiplier for
/// targets that emulate floating point in software.
#[derive(Debug, Clone, PartialEq)]
pub struct SocProfile {
    pub name: String,
    pub freq_hz: f64,
    pub macs_per_cycle_fwd: f64,
    pub macs_per_cycle_bwd: f64,
    /// 1.0 with a hardware FPU; >1 when float ops are emulated.
    pub float_emulation: f64,
}

impl SocProfile {
    /// Octa-core 370 MHz target with a hardware FPU. Effective throughput
    /// calibrated so a 5-epoch, 512-frame full fine-tune of the reference
    /// network lands on the measured 123 s; about 2.85 MAC/cycle against a
    /// 5.3 peak, the difference being data movement.
    pub fn gap9() -> SocProfile {
        SocProfile {
            name: "gap9".to_string(),
            freq_hz: 370e6,
            macs_per_cycle_fwd: 2.845_731,
            macs_per_cycle_bwd: 2.845_731,
            float_emulation: 1.0,
        }
    }

    /// Octa-core 175 MHz predecessor without an FPU: floats are emulated at
    /// roughly 10x, and the residual throughput is calibrated against its
    /// own measured 512-frame full fine-tune (5211 s).
    pub fn gap8() -> SocProfile {
        SocProfile {
            name: "gap8".to_string(),
            freq_hz: 175e6,
            macs_per_cycle_fwd: 1.420_196,
            macs_per_cycle_bwd: 1.420_196,
            float_emulation: 10.0,
        }
    }

    /// Builds a profile from one measured run: `total_macs` executed in
    /// `observed_seconds` at `freq_hz` with the given emulation multiplier.
    /// Forward and backward throughput are set equal; a single measured
    /// cell cannot separate them.
    pub fn calibrated(
        name: &str,
        freq_hz: f64,
        float_emulation: f64,
        total_macs: u64,
        observed_seconds: f64,
    ) -> SocProfile {
        let eff = total_macs as f64 * float_emulation / (observed_seconds * freq_hz);
        SocProfile {
            name: name.to_string(),
            freq_hz,
            macs_per_cycle_fwd: eff,
            macs_per_cycle_bwd: eff,
            float_emulation,
        }
    }

    /// Seconds to execute the given MAC counts once.
    pub fn seconds_for(&self, fwd_macs: u64, bwd_macs: u64) -> f64 {
        let cycles =
            fwd_macs as f64 / self.macs_per_cycle_fwd + bwd_macs as f64 / self.macs_per_cycle_bwd;
        cycles * self.float_emulation / self.freq_hz
    }
}

/// Projected wall time for a fine-tuning run: `epochs` passes over
/// `set_size` frames, one train step per frame.
pub fn finetune_seconds(
    profile: &SocProfile,
    step: &TrainStepCost,
    set_size: usize,
    epochs: usize,
) -> f64 {
    let frames = (set_size * epochs) as f64;
    frames * profile.seconds_for(step.forward_macs, step.backward_macs())
}

/// One row of the cost table the CLI emits.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub strategy: String,
    pub updated_params: u64,
    pub updated_share: f64,
    pub activation_units: u64,
    pub activation_kb_on_target: f64,
    pub train_step_macs: u64,
    /// (soc name, set size, seconds), in the order requested.
    pub times: Vec<(String, usize, f64)>,
}

/// Cost rows for each strategy, with wall-time projections for every
/// (profile, set size) pair at the given epoch count.
pub fn cost_table(
    arch: &ArchDescriptor,
    strategies: &[UpdateStrategy],
    profiles: &[SocProfile],
    set_sizes: &[usize],
    epochs: usize,
) -> Result<Vec<CostReport>> {
    let trainable = param_census(arch)?.trainable();
    let mut rows = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let step = train_step_cost(arch, strategy)?;
        let mut times = Vec::new();
        for profile in profiles {
            for &set in set_sizes {
                times.push((
                    profile.name.clone(),
                    set,
                    finetune_seconds(profile, &step, set, epochs),
                ));
            }
        }
        rows.push(CostReport {
            strategy: strategy.label().to_string(),
            updated_params: step.updated_params,
            updated_share: step.updated_params as f64 / trainable as f64,
            activation_units: step.activation_units,
            activation_kb_on_target: step.activation_kb_on_target(),
            train_step_macs: step.total_macs(),
            times,
        });
    }
    Ok(rows)
}
