//! Segmented scene objects and the on-disk scene manifest.
//!
//! Manifest layout:
//! `{scene_id, objects: [{instance_id, class, points_path, views: [{intrinsics, extrinsics, depth_path}]}]}`
//! with paths relative to the manifest. Points are XYZ text, depths 16-bit PGM.

use std::fs;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::io::{load_xyz, save_xyz};
use crate::geometry::{PointCloud, TriMesh};
use crate::render::pgm::{load_depth_pgm, save_depth_pgm};
use crate::render::{CameraView, Intrinsics};

/// Depth quantization used when writing scenes, millimeters per count.
pub const DEPTH_SCALE_MM: f64 = 0.2;

/// Segmented observation of one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub instance_id: String,
    pub class_label: String,
    pub points: PointCloud,
    #[serde(default)]
    pub partial_mesh: Option<TriMesh>,
    pub views: Vec<CameraView>,
}

impl SceneObject {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if let Some(first) = self.views.first() {
            for v in &self.views[1..] {
                if v.width() != first.width() || v.height() != first.height() {
                    return Err(Error::ResolutionMismatch(
                        first.width(),
                        first.height(),
                        v.width(),
                        v.height(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub objects: Vec<SceneObject>,
}

/// World-to-camera transform as a row-major rotation and a translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicsRecord {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Isometry3<f64>> for ExtrinsicsRecord {
    fn from(iso: &Isometry3<f64>) -> Self {
        let m = iso.rotation.to_rotation_matrix().into_inner();
        ExtrinsicsRecord {
            rotation: [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]),
            translation: iso.translation.vector.into(),
        }
    }
}

impl ExtrinsicsRecord {
    pub fn to_isometry(&self) -> Result<Isometry3<f64>> {
        let m = Matrix3::from_fn(|r, c| self.rotation[r][c]);
        if m.iter().any(|x| !x.is_finite())
            || (m.transpose() * m - Matrix3::identity()).norm() > 1e-6
            || m.determinant() < 0.0
        {
            return Err(Error::InvalidCamera("extrinsic rotation is not orthonormal".into()));
        }
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&m));
        Ok(Isometry3::from_parts(
            Translation3::from(nalgebra::Vector3::from(self.translation)),
            rotation,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub intrinsics: Intrinsics,
    pub extrinsics: ExtrinsicsRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub instance_id: String,
    pub class: String,
    pub points_path: String,
    pub views: Vec<ViewRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scene_id: String,
    pub objects: Vec<ObjectRecord>,
}

/// Writes `scene.json` plus point and depth files into `dir`.
pub fn save_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut objects = Vec::with_capacity(scene.objects.len());
    for obj in &scene.objects {
        let points_path = format!("{}.xyz", obj.instance_id);
        save_xyz(&obj.points, dir.join(&points_path))?;
        let mut views = Vec::with_capacity(obj.views.len());
        for (k, view) in obj.views.iter().enumerate() {
            let depth_path = match &view.depth {
                Some(depth) => {
                    let name = format!("{}_view{k}.pgm", obj.instance_id);
                    save_depth_pgm(depth, DEPTH_SCALE_MM, dir.join(&name))?;
                    Some(name)
                }
                None => None,
            };
            views.push(ViewRecord {
                intrinsics: view.intrinsics,
                extrinsics: (&view.extrinsics).into(),
                depth_path,
            });
        }
        objects.push(ObjectRecord {
            instance_id: obj.instance_id.clone(),
            class: obj.class_label.clone(),
            points_path,
            views,
        });
    }
    let manifest = SceneManifest {
        scene_id: scene.scene_id.clone(),
        objects,
    };
    let path = dir.join("scene.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: SceneManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut objects = Vec::with_capacity(manifest.objects.len());
    for rec in manifest.objects {
        let points = load_xyz(base.join(&rec.points_path))?;
        let mut views = Vec::with_capacity(rec.views.len());
        for v in rec.views {
            let mut view = CameraView::new(v.intrinsics, v.extrinsics.to_isometry()?)?;
            if let Some(depth_path) = &v.depth_path {
                view = view.with_depth(load_depth_pgm(base.join(depth_path))?)?;
            }
            views.push(view);
        }
        let obj = SceneObject {
            instance_id: rec.instance_id,
            class_label: rec.class,
            points,
            partial_mesh: None,
            views,
        };
        obj.validate()?;
        objects.push(obj);
    }
    Ok(Scene {
        scene_id: manifest.scene_id,
        objects,
    })
}
