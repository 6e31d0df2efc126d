//! Synthetic flight scenes with a controllable domain gap.
//!
//! Stands in for real flight datasets: a pinhole camera on the drone
//! observes a person-sized subject in front of a textured wall. The
//! subject renders as a filled ellipse whose heading is observable
//! through an asymmetric notch bitten out of its front edge; the notch
//! sweeps an ellipse around the shape center as the relative yaw turns,
//! so all four pose components leave a visual trace:
//!
//! - horizontal image position encodes y/x,
//! - vertical image position encodes z/x,
//! - apparent size encodes 1/x,
//! - the notch position encodes yaw.
//!
//! Two [`DomainSpec`]s that differ in background, subject appearance,
//! noise, and vignetting produce the deployment-style appearance gap
//! that fine-tuning experiments need. Labels are exact by construction.
//!
//! Trajectories alternate subject-still blocks with movement between
//! random waypoints while the drone drifts on slow oscillations and
//! keeps the subject roughly centered by imperfect yaw tracking; the
//! still blocks are what the cooperative acquisition protocol detects
//! and exploits.

use super::{check_sequence, FlightRecord, Image, FRAME_HEIGHT, FRAME_WIDTH};
use crate::error::Error;
use crate::pose::{relpose, wrap_angle, Pose4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Pinhole projection constants, in pixels. The principal point
/// defaults to the exact image center so that a horizontal flip of the
/// scene maps to a horizontal flip of the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> CameraIntrinsics {
        CameraIntrinsics {
            focal_px: 110.0,
            cx: (FRAME_WIDTH as f64 - 1.0) / 2.0,
            cy: (FRAME_HEIGHT as f64 - 1.0) / 2.0,
        }
    }
}

/// Appearance parameters of one synthetic environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    /// Mean background intensity in [0, 1].
    pub background_base: f64,
    /// Peak-to-peak amplitude of the background texture.
    pub background_contrast: f64,
    /// Texture cell size in pixels.
    pub texture_scale: f64,
    /// Seed of the background texture lattice.
    pub texture_seed: u64,
    /// Subject fill intensity in [0, 1].
    pub subject_intensity: f64,
    /// Physical subject half-width in meters.
    pub subject_radius_m: f64,
    /// Vertical over horizontal subject extent.
    pub subject_aspect: f64,
    /// Notch radius as a fraction of the subject radius.
    pub notch_depth: f64,
    pub intrinsics: CameraIntrinsics,
    /// Per-pixel Gaussian noise deviation in [0, 1] units.
    pub noise_sigma: f64,
    /// Corner darkening strength in [0, 1).
    pub vignette: f64,
}

impl DomainSpec {
    /// The pretraining environment: bright wall, dark subject, mild
    /// noise.
    pub fn domain_a() -> DomainSpec {
        DomainSpec {
            background_base: 0.72,
            background_contrast: 0.25,
            texture_scale: 11.0,
            texture_seed: 101,
            subject_intensity: 0.30,
            subject_radius_m: 0.30,
            subject_aspect: 1.45,
            notch_depth: 0.42,
            intrinsics: CameraIntrinsics::default(),
            noise_sigma: 0.012,
            vignette: 0.08,
        }
    }

    /// The deployment environment: darker, differently textured wall,
    /// darker and slightly slimmer subject, more sensor noise and
    /// vignetting. The subject keeps the same contrast polarity as in
    /// domain A (darker than the background), so the gap is a shift,
    /// not a label flip.
    pub fn domain_b() -> DomainSpec {
        DomainSpec {
            background_base: 0.52,
            background_contrast: 0.38,
            texture_scale: 23.0,
            texture_seed: 202,
            subject_intensity: 0.16,
            subject_radius_m: 0.27,
            subject_aspect: 1.30,
            notch_depth: 0.38,
            intrinsics: CameraIntrinsics::default(),
            noise_sigma: 0.035,
            vignette: 0.22,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        let unit = [
            self.background_base,
            self.background_contrast,
            self.subject_intensity,
            self.notch_depth,
            self.noise_sigma,
            self.vignette,
        ];
        if unit.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid(
                "domain spec",
                "intensity, contrast, notch, noise, and vignette must be in [0, 1]",
            ));
        }
        if !(self.texture_scale >= 2.0)
            || !(self.subject_radius_m > 0.0)
            || !(self.subject_aspect > 0.0)
            || !(self.intrinsics.focal_px > 0.0)
        {
            return Err(Error::invalid(
                "domain spec",
                "texture scale, subject size, aspect, and focal length must be positive",
            ));
        }
        Ok(())
    }
}

/// Closest allowed subject distance along the camera axis; anything
/// nearer (or behind) is rejected.
pub const MIN_SUBJECT_DISTANCE: f64 = 0.1;

fn hash2(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut h = (ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
        ^ seed.wrapping_mul(0xd6e8_feb8_6659_fd93);
    h ^= h >> 32;
    h = h.wrapping_mul(0xd6e8_feb8_6659_fd93);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothed value noise on a seeded integer lattice, in [0, 1].
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let ix = x.floor();
    let iy = y.floor();
    let fx = smooth(x - ix);
    let fy = smooth(y - iy);
    let (ix, iy) = (ix as i64, iy as i64);
    let v00 = hash2(ix, iy, seed);
    let v10 = hash2(ix + 1, iy, seed);
    let v01 = hash2(ix, iy + 1, seed);
    let v11 = hash2(ix + 1, iy + 1, seed);
    let top = v00 + (v10 - v00) * fx;
    let bot = v01 + (v11 - v01) * fx;
    top + (bot - top) * fy
}

/// Renders one frame of the subject as seen from the drone.
///
/// `frame_seed` drives only the per-pixel sensor noise; geometry and
/// texture are functions of the poses and the domain alone.
pub fn render_frame(
    domain: &DomainSpec,
    drone_world: &Pose4,
    subject_world: &Pose4,
    frame_seed: u64,
) -> Result<Image, Error> {
    domain.validate()?;
    let rel = relpose(drone_world, subject_world);
    if rel.x <= MIN_SUBJECT_DISTANCE {
        return Err(Error::invalid(
            "scene",
            format!("subject at x = {} m is behind or on the camera", rel.x),
        ));
    }
    let cam = domain.intrinsics;
    let u = cam.cx - cam.focal_px * rel.y / rel.x;
    let v = cam.cy - cam.focal_px * rel.z / rel.x;
    let rad_u = cam.focal_px * domain.subject_radius_m / rel.x;
    let rad_v = rad_u * domain.subject_aspect;
    // The notch sweeps an ellipse inside the shape as the relative yaw
    // turns: left-right from sin(yaw), up-down from cos(yaw).
    let notch_u = u - 0.62 * rad_u * rel.yaw.sin();
    let notch_v = v - 0.55 * rad_v * rel.yaw.cos();
    let notch_r2 = (domain.notch_depth * rad_u).powi(2);

    // The wall texture pans with drone yaw and height, so frames taken
    // from different poses see different backgrounds.
    let pan_u = cam.focal_px * drone_world.yaw;
    let pan_v = 40.0 * drone_world.z;

    let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
    let noise = Normal::new(0.0, domain.noise_sigma)
        .map_err(|e| Error::invalid("domain spec", e.to_string()))?;
    let half_w = (FRAME_WIDTH as f64 - 1.0) / 2.0;
    let half_h = (FRAME_HEIGHT as f64 - 1.0) / 2.0;
    let corner2 = half_w * half_w + half_h * half_h;

    let mut plane = Vec::with_capacity(FRAME_WIDTH * FRAME_HEIGHT);
    for py in 0..FRAME_HEIGHT {
        for px in 0..FRAME_WIDTH {
            let (fx, fy) = (px as f64, py as f64);
            let tex = value_noise(
                (fx + pan_u) / domain.texture_scale,
                (fy + pan_v) / domain.texture_scale,
                domain.texture_seed,
            );
            let mut val = domain.background_base + domain.background_contrast * (tex - 0.5);

            let eu = (fx - u) / rad_u;
            let ev = (fy - v) / rad_v;
            if eu * eu + ev * ev <= 1.0 {
                let du = fx - notch_u;
                let dv = fy - notch_v;
                if du * du + dv * dv > notch_r2 {
                    val = domain.subject_intensity;
                }
            }

            let dx = fx - half_w;
            let dy = fy - half_h;
            val *= 1.0 - domain.vignette * (dx * dx + dy * dy) / corner2;
            val += noise.sample(&mut rng);
            plane.push(val);
        }
    }
    Image::from_plane(FRAME_WIDTH, FRAME_HEIGHT, &plane)
}

/// Trajectory tuning constants for [`synth_sequence`]. Subjects pause
/// inside [`STILL_SECONDS`] blocks and travel between waypoints during
/// [`MOVE_SECONDS`] blocks, so roughly two thirds of a sequence is
/// still time for the acquisition protocol to find.
const STILL_SECONDS: (f64, f64) = (3.5, 7.0);
const MOVE_SECONDS: (f64, f64) = (2.0, 4.0);
const SAMPLE_RATE_HZ: f64 = 4.0;

fn waypoint(rng: &mut ChaCha8Rng) -> Pose4 {
    Pose4::new(
        rng.gen_range(1.6..4.2),
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-0.25..0.25),
        rng.gen_range(-PI..PI),
    )
}

fn lerp_pose(a: &Pose4, b: &Pose4, t: f64) -> Pose4 {
    let s = smooth(t);
    Pose4::new(
        a.x + (b.x - a.x) * s,
        a.y + (b.y - a.y) * s,
        a.z + (b.z - a.z) * s,
        wrap_angle(a.yaw + wrap_angle(b.yaw - a.yaw) * s),
    )
}

/// Generates a sequence of `n` frames at 4 Hz in the given domain:
/// trajectories and rendered images, with exact labels. Deterministic
/// in all inputs; the same seed reproduces the dataset bit for bit.
pub fn synth_sequence(
    domain: &DomainSpec,
    subject_id: &str,
    n: usize,
    seed: u64,
) -> Result<Vec<FlightRecord>, Error> {
    domain.validate()?;
    if n == 0 {
        return Err(Error::invalid("synthesis", "sequence length must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let period = 1.0 / SAMPLE_RATE_HZ;

    // Subject: alternate still blocks and waypoint-to-waypoint moves.
    let mut subject_track = Vec::with_capacity(n);
    let mut here = waypoint(&mut rng);
    let mut still = true;
    let mut block_left = rng.gen_range(STILL_SECONDS.0..STILL_SECONDS.1);
    let mut target = here;
    let mut move_total = 0.0;
    let mut move_done = 0.0;
    while subject_track.len() < n {
        if block_left <= 0.0 {
            still = !still;
            if still {
                here = target;
                block_left = rng.gen_range(STILL_SECONDS.0..STILL_SECONDS.1);
            } else {
                target = waypoint(&mut rng);
                move_total = rng.gen_range(MOVE_SECONDS.0..MOVE_SECONDS.1);
                move_done = 0.0;
                block_left = move_total;
            }
        }
        if still {
            subject_track.push(here);
        } else {
            move_done += period;
            subject_track.push(lerp_pose(&here, &target, (move_done / move_total).min(1.0)));
        }
        block_left -= period;
    }

    // Drone: slow positional oscillation around the origin plus noisy
    // yaw tracking of the subject.
    let phases: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..(2.0 * PI)));
    let mut records = Vec::with_capacity(n);
    for (k, subject_world) in subject_track.iter().enumerate() {
        let t = k as f64 * period;
        let dx = 0.45 * (0.23 * t + phases[0]).sin();
        let dy = 0.55 * (0.17 * t + phases[1]).sin();
        let dz = 0.15 * (0.11 * t + phases[2]).sin();
        let bearing = (subject_world.y - dy).atan2(subject_world.x - dx);
        let yaw = wrap_angle(bearing + 0.22 * (0.29 * t + phases[3]).sin());
        let drone_world = Pose4::new(dx, dy, dz, yaw);
        let frame_seed = seed
            .wrapping_mul(0x100_0000_01b3)
            .wrapping_add(k as u64)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let image = render_frame(domain, &drone_world, subject_world, frame_seed)?;
        records.push(FlightRecord {
            timestamp: k as f64 * period,
            image,
            drone_world,
            subject_world: *subject_world,
            subject_id: subject_id.to_string(),
        });
    }
    check_sequence(&records)?;
    Ok(records)
}

/// Generates matched pretraining and deployment datasets: `n` frames in
/// domain A and `n` frames in domain B, with independent trajectories.
pub fn synth_generate(
    domain_a: &DomainSpec,
    domain_b: &DomainSpec,
    n: usize,
    seed: u64,
) -> Result<(Vec<FlightRecord>, Vec<FlightRecord>), Error> {
    let a = synth_sequence(domain_a, "sA", n, seed)?;
    let b = synth_sequence(domain_b, "sB", n, seed ^ 0xb)?;
    Ok((a, b))
}
