//! Rigid-body poses and the handful of rotation utilities the pipeline needs.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Pitch magnitude beyond which the ZYX yaw extraction is considered unreliable.
pub const GIMBAL_LIMIT_DEG: f64 = 89.9;

/// A rigid transform `x -> R x + t` in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation about the world z axis followed by translation `t`.
    pub fn from_yaw(yaw: f64, t: Vec3) -> Self {
        Self::new(rot_z(yaw), t)
    }

    /// `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64, t: Vec3) -> Self {
        Self::new(rot_z(yaw) * rot_y(pitch) * rot_x(roll), t)
    }

    pub fn compose(&self, other: &PoseSE3) -> PoseSE3 {
        compose(self, other)
    }

    pub fn inverse(&self) -> PoseSE3 {
        let rt = self.rotation.transpose();
        PoseSE3::new(rt, -(rt * self.translation))
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// ZYX Euler angles `(yaw, pitch, roll)` in radians.
    pub fn euler_zyx(&self) -> (f64, f64, f64) {
        euler_zyx(&self.rotation)
    }

    pub fn yaw(&self) -> f64 {
        let r = &self.rotation;
        r[(1, 0)].atan2(r[(0, 0)])
    }

    /// Max deviation of `R Rᵀ` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        ortho.max((r.determinant() - 1.0).abs())
    }

    /// Row-major `[R | t]` as 12 numbers.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ]
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::x_axis(), a).matrix()
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::y_axis(), a).matrix()
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), a).matrix()
}

pub fn compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    PoseSE3::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}

pub fn euler_zyx(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    (yaw, pitch, roll)
}

/// Keep only the heading of `p`; translation is untouched.
pub fn yaw_only(p: &PoseSE3) -> Result<PoseSE3> {
    let (yaw, pitch, _) = p.euler_zyx();
    let pitch_deg = pitch.to_degrees();
    if pitch_deg.abs() > GIMBAL_LIMIT_DEG {
        return Err(Error::DegenerateAttitude { pitch_deg });
    }
    Ok(PoseSE3::new(rot_z(yaw), p.translation))
}

/// Geodesic rotation angle in radians, via the clamped trace formula.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// `(translation error [m], rotation error [deg])` of an estimate against ground truth.
pub fn transform_error(est: &PoseSE3, gt: &PoseSE3) -> (f64, f64) {
    let trans = (est.translation - gt.translation).norm();
    let rot = rotation_angle(&(gt.rotation.transpose() * est.rotation)).to_degrees();
    (trans, rot)
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = a % two_pi;
    if x <= -std::f64::consts::PI {
        x += two_pi;
    } else if x > std::f64::consts::PI {
        x -= two_pi;
    }
    x
}

// Row-major 3x3 + translation, matching the interchange format.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    #[serde(rename = "R")]
    rotation: [f64; 9],
    t: [f64; 3],
}

impl Serialize for PoseSE3 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rm = self.to_row_major();
        let mut rotation = [0.0; 9];
        rotation.copy_from_slice(&rm[..9]);
        PoseRepr {
            rotation,
            t: [rm[9], rm[10], rm[11]],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PoseSE3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        Ok(PoseSE3::new(
            Matrix3::from_row_slice(&repr.rotation),
            Vec3::from(repr.t),
        ))
    }
}
