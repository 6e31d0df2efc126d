//! 4-DOF pose algebra for ground-parallel flight.
//!
//! A [`Pose4`] is a rigid transform whose rotation is a single yaw about the
//! gravity-aligned z axis: (x, y, z, yaw). The set is closed under
//! composition because stacked rotations about the same axis stay about that
//! axis, so relative poses between drone and subject frames never leave it.
//!
//! Yaw is kept normalized to (-pi, pi] by every operation here.

use std::f64::consts::PI;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

/// Wraps an angle onto (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        PI
    } else {
        w
    }
}

/// Pose with translation (x, y, z) in meters and yaw in radians.
///
/// Composition follows the usual frame chaining: `a.compose(&b)` expresses
/// `b` (a pose in `a`'s frame) in the frame `a` itself is expressed in. Only
/// x and y rotate with yaw; z is along the rotation axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose4 {
    pub const IDENTITY: Pose4 = Pose4 { x: 0.0, y: 0.0, z: 0.0, yaw: 0.0 };

    /// Builds a pose, wrapping yaw onto (-pi, pi].
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Pose4 {
        Pose4 { x, y, z, yaw: wrap_angle(yaw) }
    }

    /// Frame chaining: self, then `b` expressed in self's frame.
    pub fn compose(&self, b: &Pose4) -> Pose4 {
        let (s, c) = self.yaw.sin_cos();
        Pose4 {
            x: self.x + c * b.x - s * b.y,
            y: self.y + s * b.x + c * b.y,
            z: self.z + b.z,
            yaw: wrap_angle(self.yaw + b.yaw),
        }
    }

    /// The transform undoing self: `a.compose(&a.invert())` is the identity.
    pub fn invert(&self) -> Pose4 {
        let (s, c) = self.yaw.sin_cos();
        Pose4 {
            x: -(c * self.x + s * self.y),
            y: -(c * self.y - s * self.x),
            z: -self.z,
            yaw: wrap_angle(-self.yaw),
        }
    }

    /// Translation-only speed helper: straight-line distance to `b` ignoring
    /// yaw and z rotation effects (z still counts as distance).
    pub fn translation_distance(&self, b: &Pose4) -> f64 {
        let dx = self.x - b.x;
        let dy = self.y - b.y;
        let dz = self.z - b.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.yaw]
    }

    pub fn from_array(a: [f64; 4]) -> Pose4 {
        Pose4::new(a[0], a[1], a[2], a[3])
    }
}

impl Mul for Pose4 {
    type Output = Pose4;

    fn mul(self, rhs: Pose4) -> Pose4 {
        self.compose(&rhs)
    }
}

impl Default for Pose4 {
    fn default() -> Self {
        Pose4::IDENTITY
    }
}

/// Pose of frame `b` expressed in frame `a`, both given in a common frame.
pub fn relpose(a: &Pose4, b: &Pose4) -> Pose4 {
    a.invert().compose(b)
}

/// Sum of absolute errors over the four components, yaw difference wrapped
/// onto the circle first. A yaw error of 1 rad weighs the same as 1 m.
pub fn delta(a: &Pose4, b: &Pose4) -> f64 {
    (a.x - b.x).abs()
        + (a.y - b.y).abs()
        + (a.z - b.z).abs()
        + wrap_angle(a.yaw - b.yaw).abs()
}

/// Per-component absolute errors (x, y, z, wrapped yaw), the terms of
/// [`delta`].
pub fn component_errors(a: &Pose4, b: &Pose4) -> [f64; 4] {
    [
        (a.x - b.x).abs(),
        (a.y - b.y).abs(),
        (a.z - b.z).abs(),
        wrap_angle(a.yaw - b.yaw).abs(),
    ]
}
