//! Finite-difference verification of the selective backward pass.
//!
//! The engine runs in `f64` here; every gradient the strategy selects is
//! compared against a central difference of a scalarized loss on randomly
//! generated small descriptors. Lives outside `#[cfg(test)]` because the
//! integration suites drive the same harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{conv_out, ArchDescriptor, InputSpec, LayerSpec, POSE_OUTPUTS};
use super::engine::{backward, forward, Batch, Mode};
use super::params::ModelParams;
use super::strategy::UpdateStrategy;
use crate::error::Result;

/// A random small descriptor: one to three conv blocks (norm, relu, and
/// pooling appear probabilistically), then flatten and the 4-wide head.
/// Spatial dims stay modest so finite differencing over every parameter is
/// affordable, and maps feeding a norm layer keep enough elements for
/// well-conditioned batch statistics.
///
/// Padding always stays below the kernel size. A conv with `kernel <=
/// padding` emits border pixels computed from padding alone, which are
/// exactly equal across the map; a max-pool downstream then holds exact
/// argmax ties, and the loss gets a kink exactly at the evaluation point
/// where no finite-difference step is valid.
pub fn random_small_arch(seed: u64) -> ArchDescriptor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut h: usize = rng.gen_range(8..=12);
    let mut w: usize = rng.gen_range(8..=14);
    let input = InputSpec { channels: 1, height: h, width: w };
    let mut ch: usize = 1;
    let mut layers = Vec::new();
    let blocks = rng.gen_range(1..=3);
    for b in 0..blocks {
        let mut picked = None;
        for _ in 0..12 {
            let kernel = rng.gen_range(1..=3usize);
            let stride = rng.gen_range(1..=2usize);
            let padding = rng.gen_range(0..=1usize).min(kernel - 1);
            let oh = conv_out(h, kernel, stride, padding);
            let ow = conv_out(w, kernel, stride, padding);
            if let (Some(oh), Some(ow)) = (oh, ow) {
                if (3..=20).contains(&oh) && (3..=20).contains(&ow) {
                    picked = Some((kernel, stride, padding, oh, ow));
                    break;
                }
            }
        }
        let (kernel, stride, padding, oh, ow) = picked.unwrap_or((1, 1, 0, h, w));
        let out_channels = rng.gen_range(2..=5usize);
        layers.push(LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride,
            padding,
            bias: rng.gen_bool(0.5),
        });
        h = oh;
        w = ow;
        ch = out_channels;
        if b == 0 || rng.gen_bool(0.75) {
            layers.push(LayerSpec::BatchNorm { channels: ch });
        }
        if rng.gen_bool(0.75) {
            layers.push(LayerSpec::Relu);
        }
        if h >= 6 && w >= 6 && rng.gen_bool(0.35) {
            layers.push(LayerSpec::MaxPool { kernel: 2, stride: 2 });
            h = (h - 2) / 2 + 1;
            w = (w - 2) / 2 + 1;
        }
    }
    // Keep the head small so the fc weight sweep stays cheap.
    while h * w * ch > 400 && h >= 4 && w >= 4 {
        layers.push(LayerSpec::MaxPool { kernel: 2, stride: 2 });
        h = (h - 2) / 2 + 1;
        w = (w - 2) / 2 + 1;
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::FullyConnected { out_features: POSE_OUTPUTS });
    ArchDescriptor { input, layers }
}

/// Largest relative disagreement between analytic and central-difference
/// gradients across every parameter the strategy selects, for a seeded
/// random batch of three frames.
///
/// Keep `eps` at 1e-4 or below: a coarser step can straddle a max-pool
/// argmax flip (a kink in the loss), which shows up as an O(eps)
/// disagreement that says nothing about the analytic gradient. 1e-4 leaves
/// truncation error around 1e-9 while staying far above f64 roundoff.
pub fn max_rel_error(
    arch: &ArchDescriptor,
    strategy: &UpdateStrategy,
    seed: u64,
    eps: f64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x0100_0000_01b3).wrapping_add(7));
    let params = ModelParams::<f64>::init(arch, seed)?;
    let n = 3;
    let in_elems = arch.input.elems();
    let data: Vec<f64> = (0..n * in_elems).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let batch = Batch::new(data, n, arch.input.channels, arch.input.height, arch.input.width)?;
    // Scalarize the network output with fixed random coefficients: the
    // upstream gradient is then exactly those coefficients.
    let coeff: Vec<f64> =
        (0..n * POSE_OUTPUTS).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let loss = |p: &ModelParams<f64>| -> Result<f64> {
        let mut p = p.clone();
        let (preds, _) = forward(&mut p, arch, &batch, Mode::train(), strategy)?;
        Ok(preds.data().iter().zip(&coeff).map(|(y, c)| y * c).sum())
    };

    let mut work = params.clone();
    let (_, cache) = forward(&mut work, arch, &batch, Mode::train(), strategy)?;
    let grads = backward(&work, arch, &cache, &coeff, strategy)?;

    let mut worst = 0.0f64;
    for g in grads.tensors() {
        for i in 0..g.data.len() {
            let mut plus = params.clone();
            plus.expect_mut(g.layer, g.role).data[i] += eps;
            let mut minus = params.clone();
            minus.expect_mut(g.layer, g.role).data[i] -= eps;
            let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * eps);
            let a = g.data[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}
