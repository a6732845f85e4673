//! Rigid transforms and small geometric helpers shared across modules.

use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

/// Tolerance on `RᵀR = I` and `det R = 1` when validating a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Rotation + translation mapping points from a local frame into a parent
/// frame: `p_parent = rotation * p_local + translation`.
///
/// Serialized as `{"rotation": [[..],[..],[..]], "translation": [x, y, z]}`
/// with the rotation written row by row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = Error;

    fn try_from(repr: TransformRepr) -> Result<Self> {
        let r = repr.rotation;
        let rotation = Mat3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        RigidTransform::new(rotation, Vec3::from(repr.translation))
    }
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let m = t.rotation;
        TransformRepr {
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Builds a transform, rejecting rotations that are not orthonormal with
    /// determinant +1.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_argument("transform has non-finite entries"));
        }
        let ortho = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::invalid_argument(format!(
                "rotation is not proper orthonormal (|RᵀR - I| = {ortho:e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw(yaw: f64, translation: Vec3) -> Self {
        Self {
            rotation: rotation_z(yaw),
            translation,
        }
    }

    /// Rotation about a unit axis; the axis is normalized internally.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(axis, 1e-12)
            .ok_or_else(|| Error::invalid_argument("zero rotation axis"))?;
        let rotation = *nalgebra::Rotation3::from_axis_angle(&axis, angle).matrix();
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn with_translation(&self, translation: Vec3) -> Self {
        Self {
            rotation: self.rotation,
            translation,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

pub fn rotation_z(yaw: f64) -> Mat3 {
    let (s, c) = yaw.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Slab test of a ray against an axis-aligned box. Returns the parametric
/// interval `[t_near, t_far]` (unclamped) when the infinite line crosses the
/// box, `None` otherwise.
pub fn ray_aabb(origin: &Vec3, dir: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] >= hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let t0 = (lo[a] - origin[a]) * inv;
        let t1 = (hi[a] - origin[a]) * inv;
        let (a0, a1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        t_near = t_near.max(a0);
        t_far = t_far.min(a1);
    }
    (t_near <= t_far).then_some((t_near, t_far))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let m = Mat3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err());
        let reflect = Mat3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(reflect, Vec3::zeros()).is_err());
    }

    #[test]
    fn inverse_round_trips() {
        let t = RigidTransform::from_axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.7, Vec3::new(4.0, -1.0, 2.0))
            .unwrap();
        let p = Vec3::new(0.3, -2.0, 5.0);
        let back = t.inverse().transform_point(&t.transform_point(&p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn json_is_row_major() {
        let t = RigidTransform::from_yaw(std::f64::consts::FRAC_PI_2, Vec3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_value(t).unwrap();
        let row0 = &json["rotation"][0];
        assert!((row0[1].as_f64().unwrap() + 1.0).abs() < 1e-12);
        let back: RigidTransform = serde_json::from_value(json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn json_rejects_bad_rotation() {
        let bad = r#"{"rotation": [[2,0,0],[0,1,0],[0,0,1]], "translation": [0,0,0]}"#;
        assert!(serde_json::from_str::<RigidTransform>(bad).is_err());
    }

    #[test]
    fn slab_test_basic() {
        let lo = Vec3::new(0.0, 0.0, 5.0);
        let hi = Vec3::new(1.0, 1.0, 6.0);
        let (t0, t1) = ray_aabb(&Vec3::new(0.5, 0.5, 0.0), &Vec3::z(), &lo, &hi).unwrap();
        assert_eq!((t0, t1), (5.0, 6.0));
        assert!(ray_aabb(&Vec3::new(2.0, 0.5, 0.0), &Vec3::z(), &lo, &hi).is_none());
    }
}
