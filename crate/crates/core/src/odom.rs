//! Simulated onboard odometry.
//!
//! A flying platform integrating IMU and flow measurements drifts: the
//! error of its world-frame pose estimate grows over time. This module
//! models that as independent Gaussian random walks on x, y, and yaw,
//! plus stationary zero-mean Gaussian noise on z (an altitude sensor
//! re-measures height absolutely every sample instead of integrating).
//!
//! Noise is injected per time step, not per distance traveled, and is
//! added in the world frame to the absolute estimates, which are then
//! differenced to produce relative odometry. Drift therefore grows with
//! the time separation of the differenced samples.
//!
//! The default magnitudes are placeholders chosen at a 4 Hz sample
//! rate; they are not measurements of any real platform and every
//! experiment exposes them as configuration.

use crate::error::Error;
use crate::pose::{relpose, wrap_angle, Pose4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Noise magnitudes for [`simulate`]. The x, y, and yaw values are
/// per-step random-walk increment deviations (units per square root of
/// a sample step); z is the deviation of a stationary per-sample error
/// in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdomNoiseParams {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_yaw: f64,
    pub sigma_z: f64,
    pub seed: u64,
}

impl Default for OdomNoiseParams {
    fn default() -> OdomNoiseParams {
        OdomNoiseParams {
            sigma_x: 0.01,
            sigma_y: 0.01,
            sigma_yaw: 0.002,
            sigma_z: 0.02,
            seed: 0,
        }
    }
}

impl OdomNoiseParams {
    /// A noiseless configuration: estimates equal the true poses.
    pub fn exact() -> OdomNoiseParams {
        OdomNoiseParams {
            sigma_x: 0.0,
            sigma_y: 0.0,
            sigma_yaw: 0.0,
            sigma_z: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> OdomNoiseParams {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<(), Error> {
        let all = [self.sigma_x, self.sigma_y, self.sigma_yaw, self.sigma_z];
        if all.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid(
                "odometry noise",
                "standard deviations must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

/// Wraps only when out of range, so a zero error leaves the stored yaw
/// bit-identical.
fn wrap_if_needed(yaw: f64) -> f64 {
    if yaw > PI || yaw <= -PI {
        wrap_angle(yaw)
    } else {
        yaw
    }
}

/// Produces one noisy pose estimate per true pose. The first sample
/// carries no accumulated drift (odometry is zeroed at launch); every
/// subsequent sample adds fresh random-walk increments on x, y, and
/// yaw. The z error is redrawn independently each sample. Deterministic
/// given the params' seed.
pub fn simulate(true_poses: &[Pose4], params: &OdomNoiseParams) -> Result<Vec<Pose4>, Error> {
    params.validate()?;
    if true_poses.is_empty() {
        return Err(Error::invalid("odometry simulation", "empty trajectory"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let walk_x = Normal::new(0.0, params.sigma_x)
        .map_err(|e| Error::invalid("odometry noise", e.to_string()))?;
    let walk_y = Normal::new(0.0, params.sigma_y)
        .map_err(|e| Error::invalid("odometry noise", e.to_string()))?;
    let walk_yaw = Normal::new(0.0, params.sigma_yaw)
        .map_err(|e| Error::invalid("odometry noise", e.to_string()))?;
    let jitter_z = Normal::new(0.0, params.sigma_z)
        .map_err(|e| Error::invalid("odometry noise", e.to_string()))?;

    let mut drift_x = 0.0;
    let mut drift_y = 0.0;
    let mut drift_yaw = 0.0;
    let mut estimates = Vec::with_capacity(true_poses.len());
    for (k, p) in true_poses.iter().enumerate() {
        if k > 0 {
            drift_x += walk_x.sample(&mut rng);
            drift_y += walk_y.sample(&mut rng);
            drift_yaw += walk_yaw.sample(&mut rng);
        }
        let ez = jitter_z.sample(&mut rng);
        estimates.push(Pose4 {
            x: p.x + drift_x,
            y: p.y + drift_y,
            z: p.z + ez,
            yaw: wrap_if_needed(p.yaw + drift_yaw),
        });
    }
    Ok(estimates)
}

/// Relative pose of estimate j expressed in the frame of estimate i:
/// `invert(est_i) * est_j`.
pub fn relative_odometry(estimates: &[Pose4], i: usize, j: usize) -> Result<Pose4, Error> {
    let n = estimates.len();
    if i >= n || j >= n {
        return Err(Error::invalid(
            "relative odometry",
            format!("indices ({i}, {j}) out of range for {n} estimates"),
        ));
    }
    Ok(relpose(&estimates[i], &estimates[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::delta;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn circle_track(n: usize) -> Vec<Pose4> {
        (0..n)
            .map(|k| {
                let a = k as f64 * 0.05;
                Pose4::new(a.cos(), a.sin(), 1.0 + 0.1 * a.sin(), wrap_angle(a))
            })
            .collect()
    }

    /// Two-sided chi-square acceptance for a sample variance, at a
    /// small enough level that the fixed-seed outcome is stable.
    fn assert_variance(samples: &[f64], expected: f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let s2 = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let stat = (n - 1.0) * s2 / expected;
        let chi = ChiSquared::new(n - 1.0).unwrap();
        let lo = chi.inverse_cdf(1e-4);
        let hi = chi.inverse_cdf(1.0 - 1e-4);
        assert!(
            stat > lo && stat < hi,
            "variance {s2} outside chi-square bounds for expected {expected}"
        );
    }

    #[test]
    fn zero_sigma_returns_input_exactly() {
        let track = circle_track(40);
        let est = simulate(&track, &OdomNoiseParams::exact()).unwrap();
        assert_eq!(est, track);
    }

    #[test]
    fn x_error_variance_grows_like_a_random_walk() {
        let params = OdomNoiseParams {
            sigma_x: 0.01,
            sigma_y: 0.0,
            sigma_yaw: 0.0,
            sigma_z: 0.0,
            seed: 0,
        };
        let track = vec![Pose4::IDENTITY; 40];
        let mut at_8 = Vec::new();
        let mut at_32 = Vec::new();
        for seed in 0..1200 {
            let est = simulate(&track, &params.with_seed(seed)).unwrap();
            at_8.push(est[8].x);
            at_32.push(est[32].x);
        }
        assert_variance(&at_8, 8.0 * 0.01 * 0.01);
        assert_variance(&at_32, 32.0 * 0.01 * 0.01);
        let mean = at_32.iter().sum::<f64>() / at_32.len() as f64;
        let sd_of_mean = (32.0f64).sqrt() * 0.01 / (at_32.len() as f64).sqrt();
        assert!(mean.abs() < 5.0 * sd_of_mean, "walk is biased: mean {mean}");
    }

    #[test]
    fn z_error_variance_is_stationary() {
        let params = OdomNoiseParams {
            sigma_x: 0.0,
            sigma_y: 0.0,
            sigma_yaw: 0.0,
            sigma_z: 0.02,
            seed: 0,
        };
        let track = vec![Pose4::IDENTITY; 60];
        let mut early = Vec::new();
        let mut late = Vec::new();
        for seed in 0..1200 {
            let est = simulate(&track, &params.with_seed(seed)).unwrap();
            early.push(est[3].z);
            late.push(est[55].z);
        }
        assert_variance(&early, 0.02 * 0.02);
        assert_variance(&late, 0.02 * 0.02);
    }

    #[test]
    fn yaw_wraps_through_the_boundary_without_variance_jump() {
        let params = OdomNoiseParams {
            sigma_x: 0.0,
            sigma_y: 0.0,
            sigma_yaw: 0.002,
            sigma_z: 0.0,
            seed: 0,
        };
        // True heading pinned at the wrap boundary, so roughly half of
        // all estimates cross it.
        let track = vec![Pose4::new(0.0, 0.0, 0.0, PI); 48];
        let mut errs = Vec::new();
        for seed in 0..1200 {
            let est = simulate(&track, &params.with_seed(seed)).unwrap();
            for e in &est {
                assert!(e.yaw > -PI && e.yaw <= PI, "unwrapped yaw {}", e.yaw);
            }
            errs.push(wrap_angle(est[40].yaw - PI));
        }
        assert_variance(&errs, 40.0 * 0.002 * 0.002);
    }

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let track = circle_track(32);
        let params = OdomNoiseParams::default().with_seed(7);
        let a = simulate(&track, &params).unwrap();
        let b = simulate(&track, &params).unwrap();
        assert_eq!(a, b);
        let c = simulate(&track, &params.with_seed(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn relative_odometry_matches_the_pose_algebra() {
        let track = circle_track(32);
        let est = simulate(&track, &OdomNoiseParams::default()).unwrap();
        let id = relative_odometry(&est, 5, 5).unwrap();
        assert!(delta(&id, &Pose4::IDENTITY) < 1e-12);

        let exact = simulate(&track, &OdomNoiseParams::exact()).unwrap();
        let rel = relative_odometry(&exact, 3, 11).unwrap();
        assert!(delta(&rel, &relpose(&track[3], &track[11])) < 1e-12);

        let ik = relative_odometry(&est, 2, 20).unwrap();
        let ij = relative_odometry(&est, 2, 9).unwrap();
        let jk = relative_odometry(&est, 9, 20).unwrap();
        assert!(delta(&ik, &ij.compose(&jk)) < 1e-9);

        assert!(relative_odometry(&est, 0, 32).is_err());
    }

    #[test]
    fn rejects_negative_sigma() {
        let bad = OdomNoiseParams {
            sigma_x: -0.01,
            ..OdomNoiseParams::default()
        };
        assert!(simulate(&[Pose4::IDENTITY], &bad).is_err());
    }
}
