//! Rigid poses, axis-angle helpers and the 6D rotation representation.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rigid transform stored as a translation plus a rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Rotation3::identity(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: Rotation3<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(translation, Rotation3::identity())
    }

    /// Rotation by `angle` about the line through `anchor` with direction `axis`.
    pub fn about_axis(axis: &Vector3<f64>, anchor: &Vector3<f64>, angle: f64) -> Self {
        let rotation = axis_angle(axis, angle);
        Self::new(anchor - rotation * anchor, rotation)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.translation + self.rotation * other.translation,
            self.rotation * other.rotation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(-(inv * self.translation), inv)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|x| x.is_finite())
            && self.rotation.matrix().iter().all(|x| x.is_finite())
    }

    /// Straight-line translation and slerp rotation, `t` in `[0, 1]`.
    pub fn interpolate(&self, other: &Pose, t: f64) -> Pose {
        let q0 = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let q1 = UnitQuaternion::from_rotation_matrix(&other.rotation);
        let q = q0
            .try_slerp(&q1, t, 1e-12)
            .unwrap_or(if t < 0.5 { q0 } else { q1 });
        Pose::new(
            self.translation + (other.translation - self.translation) * t,
            q.to_rotation_matrix(),
        )
    }

    /// Translation distance (m) and rotation angle (rad) to `other`.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let dt = (self.translation - other.translation).norm();
        // atan2 form: acos of the trace loses ~1e-8 rad near identity
        let m = (self.rotation.inverse() * other.rotation).into_inner();
        let s = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        )
        .norm()
            / 2.0;
        let c = (m.trace() - 1.0) / 2.0;
        (dt, s.atan2(c))
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Serialized as `{"p": [x, y, z], "r": [[row0], [row1], [row2]]}`.
#[derive(Serialize, Deserialize)]
struct PoseRepr {
    p: [f64; 3],
    r: [[f64; 3]; 3],
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m = self.rotation.matrix();
        PoseRepr {
            p: [self.translation.x, self.translation.y, self.translation.z],
            r: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(d)?;
        let m = Matrix3::new(
            repr.r[0][0],
            repr.r[0][1],
            repr.r[0][2],
            repr.r[1][0],
            repr.r[1][1],
            repr.r[1][2],
            repr.r[2][0],
            repr.r[2][1],
            repr.r[2][2],
        );
        Ok(Pose::new(
            Vector3::from(repr.p),
            Rotation3::from_matrix_unchecked(m),
        ))
    }
}

pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle)
}

/// Signed angle of the twist component of `rotation` about the unit `axis`
/// (swing-twist decomposition), wrapped to `(-pi, pi]`.
pub fn twist_angle(rotation: &Rotation3<f64>, axis: &Vector3<f64>) -> f64 {
    let q = UnitQuaternion::from_rotation_matrix(rotation);
    let proj = q.imag().dot(axis);
    let angle = 2.0 * proj.atan2(q.w);
    wrap_angle(angle)
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = a % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// First two columns of the rotation matrix, stacked column-major.
pub fn rot6d_encode(rotation: &Rotation3<f64>) -> [f64; 6] {
    let m = rotation.matrix();
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Gram-Schmidt orthonormalization of the two encoded columns, completed by
/// their cross product.
pub fn rot6d_decode(v: &[f64]) -> Result<Rotation3<f64>> {
    if v.len() != 6 {
        return Err(Error::ShapeMismatch {
            expected: 6,
            actual: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("6D rotation"));
    }
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 < 1e-9 {
        return Err(Error::DegenerateRotation);
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 < 1e-9 {
        return Err(Error::DegenerateRotation);
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
        b1, b2, b3,
    ])))
}

/// Encode a pose and gripper command as the 10-vector action layout
/// `[position 3 | rotation 6D 6 | gripper_open 1]`.
pub fn pose_to_action(pose: &Pose, gripper_open: bool) -> [f64; 10] {
    let r = rot6d_encode(&pose.rotation);
    [
        pose.translation.x,
        pose.translation.y,
        pose.translation.z,
        r[0],
        r[1],
        r[2],
        r[3],
        r[4],
        r[5],
        if gripper_open { 1.0 } else { 0.0 },
    ]
}

/// Inverse of [`pose_to_action`]; the gripper channel is thresholded at 0.5.
pub fn action_to_pose(action: &[f64]) -> Result<(Pose, bool)> {
    if action.len() != 10 {
        return Err(Error::ShapeMismatch {
            expected: 10,
            actual: action.len(),
        });
    }
    if action.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("action"));
    }
    let rotation = rot6d_decode(&action[3..9])?;
    Ok((
        Pose::new(Vector3::new(action[0], action[1], action[2]), rotation),
        action[9] >= 0.5,
    ))
}
