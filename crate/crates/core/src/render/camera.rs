use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::DepthMap;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Centered principal point with the given horizontal field of view.
    pub fn with_fov(width: usize, height: usize, horizontal_fov: f64) -> Self {
        let f = (width as f64 / 2.0) / (horizontal_fov / 2.0).tan();
        Intrinsics {
            fx: f,
            fy: f,
            cx: (width / 2) as f64,
            cy: (height / 2) as f64,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be positive".into()));
        }
        Ok(())
    }

    /// Camera-frame point on the ray through pixel `(u, v)` at z-depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth)
    }
}

/// Pinhole camera (OpenCV axes: x right, y down, z forward) with optional depth.
///
/// Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    /// World-to-camera rigid transform.
    pub extrinsics: Isometry3<f64>,
    pub depth: Option<DepthMap>,
}

impl CameraView {
    pub fn new(intrinsics: Intrinsics, extrinsics: Isometry3<f64>) -> Result<Self> {
        intrinsics.validate()?;
        Ok(CameraView {
            intrinsics,
            extrinsics,
            depth: None,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(intrinsics: Intrinsics, eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidCamera("view direction parallel to up vector".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        let translation = -(rotation * eye);
        CameraView::new(
            intrinsics,
            Isometry3::from_parts(Translation3::from(translation), rotation),
        )
    }

    pub fn with_depth(mut self, depth: DepthMap) -> Result<Self> {
        if depth.width() != self.intrinsics.width || depth.height() != self.intrinsics.height {
            return Err(Error::ResolutionMismatch(
                depth.width(),
                depth.height(),
                self.intrinsics.width,
                self.intrinsics.height,
            ));
        }
        self.depth = Some(depth);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn camera_center(&self) -> Vec3 {
        self.extrinsics.inverse().translation.vector
    }
}

/// World-frame points for every valid depth pixel of the view.
pub fn backproject(view: &CameraView) -> Result<PointCloud> {
    let depth = view.depth.as_ref().ok_or(Error::MissingDepth)?;
    let cam_to_world = view.extrinsics.inverse();
    let k = &view.intrinsics;
    let mut points = Vec::new();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            let d = depth.get(u, v);
            if d > 0.0 {
                let cam = k.unproject(u as f64, v as f64, d);
                points.push(cam_to_world.transform_point(&cam.into()).coords);
            }
        }
    }
    Ok(PointCloud::new(points))
}
