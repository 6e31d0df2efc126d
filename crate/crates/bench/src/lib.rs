//! Shared fixtures for the criterion benches: seeded batches and parameter
//! stores so runs are comparable across machines.

use fieldtune_core::nn::{ArchDescriptor, Batch, ModelParams};

/// Deterministic pseudo-image batch covering the descriptor's input shape.
pub fn seeded_batch(arch: &ArchDescriptor, n: usize) -> Batch<f32> {
    let elems = n * arch.input.elems();
    // Cheap LCG keeps the fixture free of RNG crate versioning effects.
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let data: Vec<f32> = (0..elems)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 40) as f32) / (1u64 << 24) as f32 - 0.5
        })
        .collect();
    Batch::new(data, n, arch.input.channels, arch.input.height, arch.input.width)
        .expect("fixture batch matches descriptor")
}

/// Seeded parameters for the descriptor.
pub fn seeded_params(arch: &ArchDescriptor, seed: u64) -> ModelParams<f32> {
    ModelParams::init(arch, seed).expect("fixture params")
}
