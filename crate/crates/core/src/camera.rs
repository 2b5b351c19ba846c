//! Pinhole camera with a rigid world-to-camera transform.
//!
//! Convention: camera looks down +z, image x right, image y down. Pixel
//! (x, y) is sampled at its center (x + 0.5, y + 0.5).

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    /// Rigid transform, row-major: `x_cam = R x_world + t`.
    world_to_camera: [[f64; 4]; 4],
    intrinsics: Intrinsics,
    width: usize,
    height: usize,
}

impl CameraView {
    pub fn new(
        world_to_camera: Matrix4<f64>,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if intrinsics.fx <= 0.0 || intrinsics.fy <= 0.0 {
            return Err(Error::Invariant("focal lengths must be positive".into()));
        }
        if width < 8 || height < 8 {
            return Err(Error::Invariant("image must be at least 8x8".into()));
        }
        let mut rows = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                rows[r][c] = world_to_camera[(r, c)];
            }
        }
        Ok(Self { world_to_camera: rows, intrinsics, width, height })
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -rot * eye;
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self::new(m, intrinsics, width, height)
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let m = &self.world_to_camera;
        Matrix3::new(
            m[0][0], m[0][1], m[0][2],
            m[1][0], m[1][1], m[1][2],
            m[2][0], m[2][1], m[2][2],
        )
    }

    pub fn translation(&self) -> Vector3<f64> {
        let m = &self.world_to_camera;
        Vector3::new(m[0][3], m[1][3], m[2][3])
    }

    /// World-space point to camera coordinates.
    pub fn to_camera(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// Perspective projection of a camera-space point to pixel coordinates.
    pub fn project_camera_point(&self, t: Vector3<f64>) -> [f64; 2] {
        [
            self.intrinsics.fx * t.x / t.z + self.intrinsics.cx,
            self.intrinsics.fy * t.y / t.z + self.intrinsics.cy,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intr() -> Intrinsics {
        Intrinsics { fx: 100.0, fy: 100.0, cx: 32.0, cy: 32.0 }
    }

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let view = CameraView::look_at(
            Vector3::new(4.0, 1.0, 2.0),
            Vector3::zeros(),
            Vector3::z(),
            intr(),
            64,
            64,
        )
        .unwrap();
        let t = view.to_camera(Vector3::zeros());
        assert!(t.z > 0.0);
        let p = view.project_camera_point(t);
        assert_relative_eq!(p[0], 32.0, epsilon = 1e-9);
        assert_relative_eq!(p[1], 32.0, epsilon = 1e-9);
    }

    #[test]
    fn rotation_is_orthonormal() {
        let view = CameraView::look_at(
            Vector3::new(-1.0, 3.0, 0.5),
            Vector3::zeros(),
            Vector3::z(),
            intr(),
            64,
            64,
        )
        .unwrap();
        let r = view.rotation();
        let should_be_eye = r * r.transpose();
        assert_relative_eq!(should_be_eye, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn center_round_trips() {
        let eye = Vector3::new(2.0, -1.0, 1.5);
        let view =
            CameraView::look_at(eye, Vector3::zeros(), Vector3::z(), intr(), 64, 64).unwrap();
        assert_relative_eq!(view.center(), eye, epsilon = 1e-12);
    }

    #[test]
    fn validation() {
        let bad = CameraView::new(
            Matrix4::identity(),
            Intrinsics { fx: 0.0, fy: 1.0, cx: 0.0, cy: 0.0 },
            64,
            64,
        );
        assert!(bad.is_err());
        let small = CameraView::new(Matrix4::identity(), intr(), 4, 64);
        assert!(small.is_err());
    }

    #[test]
    fn serde_round_trip() {
        let view = CameraView::look_at(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::zeros(),
            Vector3::z(),
            intr(),
            128,
            96,
        )
        .unwrap();
        let json = serde_json::to_string(&view).unwrap();
        let back: CameraView = serde_json::from_str(&json).unwrap();
        assert_eq!(view, back);
    }
}
