//! Pinhole camera with a rigid world-from-camera pose.
//!
//! Camera frame follows the usual computer-vision convention: +x right,
//! +y down, +z forward along the optical axis. Pixel `(x, y)` covers the
//! continuous square `[x, x+1) × [y, y+1)`, so its center sits at
//! `(x + 0.5, y + 0.5)`.

use serde::{Deserialize, Serialize};

use crate::{Error, RigidTransform, Result, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRepr", into = "CameraRepr")]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    world_from_camera: RigidTransform,
    camera_from_world: RigidTransform,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    world_from_camera: RigidTransform,
}

impl TryFrom<CameraRepr> for Camera {
    type Error = Error;

    fn try_from(r: CameraRepr) -> Result<Self> {
        Camera::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, r.world_from_camera)
    }
}

impl From<Camera> for CameraRepr {
    fn from(c: Camera) -> Self {
        CameraRepr {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_from_camera: c.world_from_camera,
        }
    }
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        world_from_camera: RigidTransform,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid_argument(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid_argument("principal point must be finite"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid_argument("image size must be non-zero"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            camera_from_world: world_from_camera.inverse(),
            world_from_camera,
        })
    }

    /// Camera with principal point at the image center and equal focal
    /// lengths derived from a horizontal field of view (radians).
    pub fn from_fov(
        horizontal_fov: f64,
        width: usize,
        height: usize,
        world_from_camera: RigidTransform,
    ) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * horizontal_fov).tan();
        Self::new(
            f,
            f,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
            world_from_camera,
        )
    }

    pub fn world_from_camera(&self) -> &RigidTransform {
        &self.world_from_camera
    }

    pub fn camera_from_world(&self) -> &RigidTransform {
        &self.camera_from_world
    }

    /// Same intrinsics with a new pose.
    pub fn with_pose(&self, world_from_camera: RigidTransform) -> Self {
        Self {
            world_from_camera,
            camera_from_world: world_from_camera.inverse(),
            ..self.clone()
        }
    }

    pub fn center(&self) -> Vec3 {
        *self.world_from_camera.translation()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unnormalized camera-frame direction through continuous pixel `(u, v)`;
    /// its z component is 1.
    pub fn camera_ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Unit world-space direction through the center of pixel `(x, y)`.
    pub fn pixel_direction(&self, x: usize, y: usize) -> Vec3 {
        let d = self.camera_ray(x as f64 + 0.5, y as f64 + 0.5);
        self.world_from_camera.transform_vector(&d).normalize()
    }

    /// Point in the world at camera-frame depth `z` along the ray through
    /// continuous pixel `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        self.world_from_camera
            .transform_point(&(self.camera_ray(u, v) * z))
    }

    /// World point to camera frame.
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.camera_from_world.transform_point(p)
    }

    /// Projects a world point to continuous pixel coordinates and camera-frame
    /// depth. Returns `None` when the point is not in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let pc = self.to_camera(p);
        if pc.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
            pc.z,
        ))
    }

    /// Whether continuous pixel coordinates fall inside the image.
    pub fn in_frame(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::new(100.0, 100.0, 50.0, 50.0, 100, 100, RigidTransform::identity()).unwrap()
    }

    #[test]
    fn projects_on_axis_point_to_principal_point() {
        let (u, v, z) = cam().project(&Vec3::new(0.0, 0.0, 10.0)).unwrap();
        assert_eq!((u, v, z), (50.0, 50.0, 10.0));
    }

    #[test]
    fn behind_camera_is_none() {
        assert!(cam().project(&Vec3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn unproject_then_project() {
        let c = cam().with_pose(
            RigidTransform::from_axis_angle(Vec3::new(0.2, 1.0, 0.1), 0.4, Vec3::new(1.0, 2.0, 3.0))
                .unwrap(),
        );
        let p = c.unproject(12.25, 80.5, 7.0);
        let (u, v, z) = c.project(&p).unwrap();
        assert!((u - 12.25).abs() < 1e-9 && (v - 80.5).abs() < 1e-9 && (z - 7.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, 4, 4, RigidTransform::identity()).is_err());
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, 0, 4, RigidTransform::identity()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = cam();
        let s = serde_json::to_string(&c).unwrap();
        let back: Camera = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
