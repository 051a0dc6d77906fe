//! Rotation algebra and the heading-agnostic coordinate frame (HACF).
//!
//! Conventions used throughout the crate:
//!
//! * quaternions are stored `(w, x, y, z)` and use the Hamilton product;
//! * a device orientation `q` is the active rotation taking device-frame
//!   vectors into a gravity-aligned world frame whose `z` axis points up;
//! * angles are radians internally.
//!
//! A HACF is any Z-up frame. Moving between two of them is a rotation about
//! `z`, so a sequence can be expressed in a randomly yawed frame without any
//! loss of information. [`to_hacf`] composes the device orientation with such
//! a yaw and is continuous over all of SO(3).

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    /// The device reference axis is (nearly) vertical, so it has no heading.
    #[error("device reference axis is vertical; heading undefined (horizontal norm {0:e})")]
    GimbalDegenerate(f64),
}

/// Horizontal norm below which [`yaw_of`] refuses to produce a heading.
pub const GIMBAL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
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
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn xy(self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

/// Unit quaternion with `w >= 0`.
///
/// Constructors renormalize and flip the sign so that `w` is non-negative;
/// `q` and `-q` therefore compare equal after construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.to_wxyz()
    }
}

impl From<[f64; 4]> for UnitQuaternion {
    fn from(a: [f64; 4]) -> Self {
        UnitQuaternion::new(a[0], a[1], a[2], a[3])
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes and canonicalizes. Components already on the unit sphere
    /// (to 1e-15) are kept bit-for-bit so that serialization round-trips.
    ///
    /// Panics on a zero or non-finite quaternion.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        assert!(n.is_finite() && n > 0.0, "cannot normalize quaternion ({w}, {x}, {y}, {z})");
        let (w, x, y, z) = if (n - 1.0).abs() > 1e-15 {
            (w / n, x / n, y / n, z / n)
        } else {
            (w, x, y, z)
        };
        if w < 0.0 {
            Self { w: -w, x: -x, y: -y, z: -z }
        } else {
            Self { w, x, y, z }
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis.scale(s / n);
        Self::new(c, a.x, a.y, a.z)
    }

    /// Rotation about world `z`.
    pub fn from_yaw(theta: f64) -> Self {
        Self::from_axis_angle(Vec3::Z, theta)
    }

    /// Exponential map of a rotation vector (axis * angle).
    pub fn from_rotation_vector(r: Vec3) -> Self {
        let angle = r.norm();
        if angle < 1e-12 {
            // second-order series keeps tiny rotations accurate
            return Self::new(1.0 - angle * angle / 8.0, 0.5 * r.x, 0.5 * r.y, 0.5 * r.z);
        }
        Self::from_axis_angle(r, angle)
    }

    /// Logarithm map: the rotation vector `axis * angle`, angle in `[0, pi]`.
    pub fn to_rotation_vector(self) -> Vec3 {
        let v = Vec3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < 1e-12 {
            return v.scale(2.0);
        }
        let angle = 2.0 * s.atan2(self.w);
        v.scale(angle / s)
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_wxyz(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn inverse(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn rotate(self, v: Vec3) -> Vec3 {
        quat_rotate(self, v)
    }

    /// Row-major rotation matrix `R(q)`.
    pub fn to_matrix(self) -> [[f64; 3]; 3] {
        let UnitQuaternion { w, x, y, z } = self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Shortest rotation distance to `other` in radians.
    pub fn angle_to(self, other: UnitQuaternion) -> f64 {
        let d = (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z).abs();
        2.0 * d.min(1.0).acos()
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;
    fn mul(self, rhs: UnitQuaternion) -> UnitQuaternion {
        quat_multiply(self, rhs)
    }
}

/// Hamilton product `a * b` (apply `b` first, then `a`).
pub fn quat_multiply(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion {
    UnitQuaternion::new(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

/// `R(q) v`.
pub fn quat_rotate(q: UnitQuaternion, v: Vec3) -> Vec3 {
    // v' = v + 2 w (u x v) + 2 u x (u x v)
    let u = Vec3::new(q.x, q.y, q.z);
    let t = u.cross(v).scale(2.0);
    v + t.scale(q.w) + u.cross(t)
}

/// Heading angle wrapped into `[-pi, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct YawAngle(f64);

impl YawAngle {
    pub fn new(theta: f64) -> Self {
        Self(wrap_angle(theta))
    }

    pub fn radians(self) -> f64 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        self.0.to_degrees()
    }

    pub fn from_degrees(deg: f64) -> Self {
        Self::new(deg.to_radians())
    }
}

impl Add for YawAngle {
    type Output = YawAngle;
    fn add(self, o: YawAngle) -> YawAngle {
        YawAngle::new(self.0 + o.0)
    }
}

impl Sub for YawAngle {
    type Output = YawAngle;
    fn sub(self, o: YawAngle) -> YawAngle {
        YawAngle::new(self.0 - o.0)
    }
}

/// Wraps into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly TAU
    if t >= PI {
        t -= TAU;
    }
    t
}

/// Device axis whose horizontal projection defines the device heading.
pub const DEVICE_HEADING_AXIS: Vec3 = Vec3::X;

/// Device heading: azimuth of the device `+x` axis projected onto world XY.
pub fn yaw_of(q: UnitQuaternion) -> Result<YawAngle, GeomError> {
    let a = quat_rotate(q, DEVICE_HEADING_AXIS);
    let h = a.x.hypot(a.y);
    if h < GIMBAL_EPS {
        return Err(GeomError::GimbalDegenerate(h));
    }
    Ok(YawAngle::new(a.y.atan2(a.x)))
}

/// `R_z(yaw) R(q_device) v_device`.
pub fn to_hacf(q_device: UnitQuaternion, yaw: YawAngle, v_device: Vec3) -> Vec3 {
    let w = quat_rotate(q_device, v_device);
    let [x, y] = rotate2d([w.x, w.y], yaw);
    Vec3::new(x, y, w.z)
}

/// Planar rotation by `theta`.
pub fn rotate2d(v: [f64; 2], theta: YawAngle) -> [f64; 2] {
    let (s, c) = theta.radians().sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Applies `R_z(theta)` to a 3-vector.
pub fn rotate_z(v: Vec3, theta: YawAngle) -> Vec3 {
    let [x, y] = rotate2d([v.x, v.y], theta);
    Vec3::new(x, y, v.z)
}
