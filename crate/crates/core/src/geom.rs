//! Minimal 3-D vector math and head-frame rotation.
//!
//! World frame is right-handed: x to the front, y to the left, z up. Yaw is
//! measured counterclockwise from +x, pitch upward from the horizontal plane.

use core::ops::{Add, AddAssign, Mul, Neg, Sub};

use libm::{asin, atan2, cos, sin, sqrt};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        sqrt(self.dot(self))
    }

    /// Unit vector in the same direction; the zero vector is returned unchanged.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn set(&mut self, axis: usize, v: f64) {
        match axis {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
    }

    /// Unit vector from azimuth/elevation in degrees.
    pub fn from_angles_deg(azimuth: f64, elevation: f64) -> Vec3 {
        let (az, el) = (azimuth.to_radians(), elevation.to_radians());
        Vec3::new(cos(az) * cos(el), sin(az) * cos(el), sin(el))
    }

    /// (azimuth, elevation) in degrees of this vector's direction.
    pub fn to_angles_deg(self) -> (f64, f64) {
        let u = self.normalized();
        let el = asin(u.z.clamp(-1.0, 1.0));
        (atan2(u.y, u.x).to_degrees(), el.to_degrees())
    }

    /// Angle between two vectors in radians.
    pub fn angle_to(self, o: Vec3) -> f64 {
        let c = self.normalized().dot(o.normalized()).clamp(-1.0, 1.0);
        libm::acos(c)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Rotate a world-frame vector into the head frame of a listener with the
/// given yaw and pitch (degrees). The listener's look direction maps to +x.
pub fn world_to_head(v: Vec3, yaw_deg: f64, pitch_deg: f64) -> Vec3 {
    let (yaw, pitch) = (yaw_deg.to_radians(), pitch_deg.to_radians());
    let (cy, sy) = (cos(yaw), sin(yaw));
    let r = Vec3::new(cy * v.x + sy * v.y, -sy * v.x + cy * v.y, v.z);
    let (cp, sp) = (cos(pitch), sin(pitch));
    Vec3::new(cp * r.x + sp * r.z, r.y, -sp * r.x + cp * r.z)
}
