//! Label-aware training augmentation.
//!
//! Photometric ops (exposure, contrast, additive Gaussian noise, box
//! blur, vignetting) change the image but not the pose label. The
//! horizontal flip mirrors the image and negates the label's y and yaw,
//! matching the camera geometry. Consistency pairs get an extra
//! label-free augmentation: time reversal, applied with probability
//! one half so relative poses in a fine-tuning set follow a symmetric
//! distribution centered on the identity.
//!
//! Application probabilities and parameter ranges are configurable
//! defaults, not measured values.

use super::Image;
use crate::loss::ConsistencyPair;
use crate::pose::Pose4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Probabilities and ranges for [`augment`]. Each op is applied
/// independently with its probability; parameters are drawn uniformly
/// from the configured range.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub p_exposure: f64,
    /// Multiplicative gain range.
    pub exposure: (f64, f64),
    pub p_contrast: f64,
    /// Contrast factor range around a 0.5 pivot.
    pub contrast: (f64, f64),
    pub p_noise: f64,
    /// Upper bound of the noise deviation, in [0, 1] units.
    pub noise_sigma_max: f64,
    pub p_blur: f64,
    /// Largest box blur kernel; 3 or 5 is drawn when applied.
    pub blur_kernel_max: usize,
    pub p_vignette: f64,
    /// Upper bound of the vignette strength.
    pub vignette_max: f64,
    pub p_flip: f64,
}

impl Default for AugmentConfig {
    fn default() -> AugmentConfig {
        AugmentConfig {
            p_exposure: 0.5,
            exposure: (0.7, 1.3),
            p_contrast: 0.5,
            contrast: (0.7, 1.3),
            p_noise: 0.5,
            noise_sigma_max: 8.0 / 255.0,
            p_blur: 0.5,
            blur_kernel_max: 5,
            p_vignette: 0.5,
            vignette_max: 0.3,
            p_flip: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), crate::error::Error> {
        let probs = [
            self.p_exposure,
            self.p_contrast,
            self.p_noise,
            self.p_blur,
            self.p_vignette,
            self.p_flip,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(crate::error::Error::invalid(
                "augmentation",
                "probabilities must be in [0, 1]",
            ));
        }
        for (name, (lo, hi)) in [("exposure", self.exposure), ("contrast", self.contrast)] {
            if !(0.0 < lo && lo <= hi) {
                return Err(crate::error::Error::invalid(
                    "augmentation",
                    format!("{name} range must satisfy 0 < low <= high"),
                ));
            }
        }
        if self.noise_sigma_max < 0.0 || self.vignette_max < 0.0 {
            return Err(crate::error::Error::invalid(
                "augmentation",
                "noise and vignette bounds must be nonnegative",
            ));
        }
        Ok(())
    }

    /// Keeps the photometric ops but never flips, for frames whose
    /// pose enters a geometric constraint that a flip would break.
    pub fn without_flip(&self) -> AugmentConfig {
        AugmentConfig {
            p_flip: 0.0,
            ..self.clone()
        }
    }

    /// Disables every op; `augment` becomes the identity.
    pub fn disabled() -> AugmentConfig {
        AugmentConfig {
            p_exposure: 0.0,
            p_contrast: 0.0,
            p_noise: 0.0,
            p_blur: 0.0,
            p_vignette: 0.0,
            p_flip: 0.0,
            ..AugmentConfig::default()
        }
    }
}

fn box_blur(plane: &[f64], width: usize, height: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = Vec::with_capacity(plane.len());
    for y in 0..height as isize {
        for x in 0..width as isize {
            let mut sum = 0.0;
            let mut count = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < width as isize && ny < height as isize {
                        sum += plane[ny as usize * width + nx as usize];
                        count += 1.0;
                    }
                }
            }
            out.push(sum / count);
        }
    }
    out
}

/// Applies the configured augmentations to one sample. Photometric ops
/// leave the label untouched; a flip negates its y and yaw.
/// Deterministic given the seed.
pub fn augment(
    image: &Image,
    label: &Pose4,
    cfg: &AugmentConfig,
    seed: u64,
) -> (Image, Pose4) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = image.width();
    let height = image.height();
    let mut plane: Vec<f64> = image.pixels().iter().map(|&v| v as f64 / 255.0).collect();
    let mut touched = false;

    if rng.gen_bool(cfg.p_exposure) {
        let gain = rng.gen_range(cfg.exposure.0..=cfg.exposure.1);
        plane.iter_mut().for_each(|v| *v *= gain);
        touched = true;
    }
    if rng.gen_bool(cfg.p_contrast) {
        let c = rng.gen_range(cfg.contrast.0..=cfg.contrast.1);
        plane.iter_mut().for_each(|v| *v = (*v - 0.5) * c + 0.5);
        touched = true;
    }
    if rng.gen_bool(cfg.p_noise) {
        let sigma = rng.gen_range(0.0..=cfg.noise_sigma_max);
        let noise = Normal::new(0.0, sigma).expect("sigma is non-negative");
        plane.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        touched = true;
    }
    if rng.gen_bool(cfg.p_blur) {
        let k = if cfg.blur_kernel_max >= 5 && rng.gen_bool(0.5) {
            5
        } else {
            3
        };
        plane = box_blur(&plane, width, height, k);
        touched = true;
    }
    if rng.gen_bool(cfg.p_vignette) {
        let s = rng.gen_range(0.0..=cfg.vignette_max);
        let half_w = (width as f64 - 1.0) / 2.0;
        let half_h = (height as f64 - 1.0) / 2.0;
        let corner2 = half_w * half_w + half_h * half_h;
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - half_w;
                let dy = y as f64 - half_h;
                plane[y * width + x] *= 1.0 - s * (dx * dx + dy * dy) / corner2;
            }
        }
        touched = true;
    }

    let mut out = if touched {
        Image::from_plane(width, height, &plane).expect("plane matches image shape")
    } else {
        image.clone()
    };
    let mut label = *label;
    if rng.gen_bool(cfg.p_flip) {
        out = out.mirrored();
        label = Pose4 {
            x: label.x,
            y: -label.y,
            z: label.z,
            yaw: -label.yaw,
        };
    }
    (out, label)
}

/// Reverses each pair independently with probability `p`, in place.
/// With `p = 0.5` the subject relative poses of a fine-tuning set
/// become symmetric around the identity. Deterministic given the seed.
pub fn reverse_pairs(pairs: &mut [ConsistencyPair], p: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pair in pairs.iter_mut() {
        if rng.gen_bool(p) {
            *pair = pair.time_reversed();
        }
    }
}
