//! Synthetic furniture database and scene generator with ground truth.
//!
//! Shapes are built directly in the canonical unit box. Every class except
//! `table` is front/back asymmetric (fronts face `-y`), so the azimuth of a
//! fitted model is observable.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cad::{CadDatabase, CadModel};
use crate::error::{Error, Result};
use crate::geometry::primitives::{assemble, cuboid, cylinder};
use crate::geometry::{apply_pose, yaw_rotation, PointCloud, Pose9D, TriMesh, Vec3};
use crate::pipeline::{annotation_symmetry, Annotation, AnnotationFile, EventKind, ProvenanceEvent, Status};
use crate::render::{backproject, rasterize, CameraView, DepthMap, Intrinsics, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use crate::scene::{Scene, SceneObject};

pub const CLASSES: [&str; 6] = ["chair", "table", "cabinet", "sofa", "bookshelf", "display"];

fn block(lo: [f64; 3], hi: [f64; 3]) -> TriMesh {
    let (lo, hi) = (Vec3::from(lo), Vec3::from(hi));
    cuboid((lo + hi) * 0.5, (hi - lo) * 0.5)
}

/// Typical physical size (x, y, z) in meters.
pub fn class_dimensions(class: &str) -> Vec3 {
    match class {
        "chair" => Vec3::new(0.5, 0.52, 0.9),
        "table" => Vec3::new(1.4, 0.8, 0.75),
        "cabinet" => Vec3::new(0.8, 0.5, 1.0),
        "sofa" => Vec3::new(1.8, 0.9, 0.8),
        "bookshelf" => Vec3::new(0.9, 0.35, 1.8),
        "display" => Vec3::new(0.6, 0.22, 0.5),
        _ => Vec3::new(0.6, 0.6, 0.6),
    }
}

/// One random member of `class`, in the canonical unit box.
pub fn class_shape(class: &str, rng: &mut impl Rng) -> Result<TriMesh> {
    let mesh = match class {
        "chair" => {
            let leg = rng.random_range(0.06..0.14);
            let seat = rng.random_range(-0.12..0.05);
            let back = rng.random_range(0.08..0.2);
            let mut parts = vec![
                block([-0.5, -0.5, seat], [0.5, 0.5, seat + 0.1]),
                block([-0.5, 0.5 - back, seat + 0.1], [0.5, 0.5, 0.5]),
            ];
            for (x, y) in [
                (-0.5, -0.5),
                (0.5 - leg, -0.5),
                (-0.5, 0.5 - leg),
                (0.5 - leg, 0.5 - leg),
            ] {
                parts.push(block([x, y, -0.5], [x + leg, y + leg, seat]));
            }
            if rng.random_bool(0.5) {
                let arm = rng.random_range(0.15..0.3);
                for x in [-0.5, 0.4] {
                    parts.push(block([x, -0.35, seat + 0.1], [x + 0.1, 0.5 - back, seat + 0.1 + arm]));
                }
            }
            assemble(&parts)
        }
        "table" => {
            let top = rng.random_range(0.06..0.14);
            let mut parts = vec![block([-0.5, -0.5, 0.5 - top], [0.5, 0.5, 0.5])];
            if rng.random_bool(0.7) {
                let leg = rng.random_range(0.05..0.1);
                let inset = rng.random_range(0.0..0.1);
                for (x, y) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                    let cx = x * (0.5 - inset - leg / 2.0);
                    let cy = y * (0.5 - inset - leg / 2.0);
                    parts.push(block(
                        [cx - leg / 2.0, cy - leg / 2.0, -0.5],
                        [cx + leg / 2.0, cy + leg / 2.0, 0.5 - top],
                    ));
                }
                if rng.random_bool(0.5) {
                    let z = rng.random_range(-0.35..-0.1);
                    parts.push(block([-0.45, -0.45, z], [0.45, 0.45, z + 0.04]));
                }
            } else {
                parts.push(block([-0.06, -0.06, -0.45], [0.06, 0.06, 0.5 - top]));
                parts.push(block([-0.3, -0.3, -0.5], [0.3, 0.3, -0.45]));
            }
            assemble(&parts)
        }
        "cabinet" => {
            let kick = rng.random_range(0.04..0.12);
            let niche = rng.random_range(0.25..0.55);
            let depth = rng.random_range(0.4..0.7);
            let front = -0.5 + depth;
            assemble(&[
                block([-0.5, -0.42, -0.5], [0.5, 0.5, -0.5 + kick]),
                block([-0.5, -0.5, -0.5 + kick], [0.5, 0.5, 0.5 - niche]),
                block([-0.5, front, 0.5 - niche], [0.5, 0.5, 0.5]),
                block([-0.5, -0.5, 0.5 - niche], [-0.42, front, 0.5]),
                block([0.42, -0.5, 0.5 - niche], [0.5, front, 0.5]),
                block([-0.1, -0.5, -0.5 + kick + 0.1], [0.1, -0.46, -0.5 + kick + 0.16]),
            ])
        }
        "sofa" => {
            let seat = rng.random_range(-0.15..0.05);
            let back = rng.random_range(0.15..0.3);
            let arm_w = rng.random_range(0.06..0.16);
            let arm_h = rng.random_range(0.1..0.25);
            let mut parts = vec![
                block([-0.5, -0.5, -0.5], [0.5, 0.5, seat]),
                block([-0.5, 0.5 - back, seat], [0.5, 0.5, 0.5]),
            ];
            if rng.random_bool(0.75) {
                parts.push(block([-0.5, -0.5, seat], [-0.5 + arm_w, 0.5 - back, seat + arm_h]));
                parts.push(block([0.5 - arm_w, -0.5, seat], [0.5, 0.5 - back, seat + arm_h]));
            }
            assemble(&parts)
        }
        "bookshelf" => {
            let shelves = rng.random_range(2..6);
            let side = rng.random_range(0.04..0.1);
            let mut parts = vec![
                block([-0.5, 0.42, -0.5], [0.5, 0.5, 0.5]),
                block([-0.5, -0.5, -0.5], [-0.5 + side, 0.42, 0.5]),
                block([0.5 - side, -0.5, -0.5], [0.5, 0.42, 0.5]),
                block([-0.5 + side, -0.5, 0.46], [0.5 - side, 0.42, 0.5]),
            ];
            for k in 0..shelves {
                let z = -0.5 + k as f64 * 0.96 / shelves as f64;
                parts.push(block([-0.5 + side, -0.5, z], [0.5 - side, 0.42, z + 0.04]));
            }
            assemble(&parts)
        }
        "display" => {
            let panel = rng.random_range(0.1..0.3);
            let low = rng.random_range(-0.25..0.0);
            let foot = rng.random_range(0.4..0.9);
            assemble(&[
                block([-0.5, 0.5 - panel, low], [0.5, 0.5, 0.5]),
                block([-0.08, 0.3, -0.45], [0.08, 0.45, low]),
                block([-foot / 2.0, -0.5, -0.5], [foot / 2.0, 0.5, -0.45]),
            ])
        }
        "cylinder" => cylinder(Vec3::zeros(), 0.5, 1.0, 48),
        other => return Err(Error::InvalidConfig(format!("no synthetic shapes for class '{other}'"))),
    };
    Ok(mesh)
}

/// `per_class` models for each listed class, ids `<class>_<k>`.
pub fn synthetic_database(classes: &[&str], per_class: usize, seed: u64) -> Result<CadDatabase> {
    let mut models = Vec::new();
    for (ci, class) in classes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ci as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        for k in 0..per_class {
            let mesh = class_shape(class, &mut rng)?;
            models.push(CadModel::new(format!("{class}_{k:03}"), *class, &mesh)?);
        }
    }
    CadDatabase::new(models)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub instance_id: String,
    pub class_label: String,
    pub cad_id: String,
    pub pose: Pose9D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub views_per_object: usize,
    pub width: usize,
    pub height: usize,
    pub horizontal_fov: f64,
    /// Angle between consecutive views of an object, radians.
    pub view_spread: f64,
    pub camera_distance: (f64, f64),
    pub camera_height: (f64, f64),
    /// Relative jitter on class dimensions.
    pub scale_jitter: f64,
    pub room_half_size: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            views_per_object: 3,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            horizontal_fov: 60f64.to_radians(),
            view_spread: 70f64.to_radians(),
            camera_distance: (2.0, 2.8),
            camera_height: (1.3, 1.9),
            scale_jitter: 0.1,
            room_half_size: 3.5,
        }
    }
}

/// Placement of one model: random yaw, jittered class size, resting on the floor.
pub fn random_pose(class: &str, center_xy: (f64, f64), jitter: f64, rng: &mut impl Rng) -> Pose9D {
    let dims = class_dimensions(class).map(|d| d * (1.0 + rng.random_range(-jitter..=jitter)));
    let yaw = rng.random_range(0.0..TAU);
    let rotation = yaw_rotation(yaw).scaled_axis();
    Pose9D::new(Vec3::new(center_xy.0, center_xy.1, dims.z / 2.0), rotation, dims).expect("valid synthetic pose")
}

/// Renders a scene of posed meshes and cuts one object's views out by instance.
///
/// Each view of object `i` keeps only the pixels where `i` is the nearest surface.
pub fn observe(meshes: &[TriMesh], index: usize, views: &[CameraView]) -> Result<(PointCloud, Vec<CameraView>)> {
    let mut masked_views = Vec::with_capacity(views.len());
    let mut points = Vec::new();
    for view in views {
        let own = rasterize(&meshes[index], view);
        let mut depth = DepthMap::zeros(view.width(), view.height());
        let others: Vec<_> = meshes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != index)
            .map(|(_, m)| rasterize(m, view))
            .collect();
        for v in 0..view.height() {
            for u in 0..view.width() {
                let d = own.depth().get(u, v);
                if d > 0.0
                    && others
                        .iter()
                        .all(|o| !(o.depth().get(u, v) > 0.0 && o.depth().get(u, v) < d))
                {
                    depth.set(u, v, d);
                }
            }
        }
        let masked = view.clone().with_depth(depth)?;
        points.extend(backproject(&masked)?.into_points());
        masked_views.push(masked);
    }
    Ok((PointCloud::new(points), masked_views))
}

/// Cameras around `target`, starting at azimuth `start` and `spread` apart.
pub fn object_views(target: Vec3, start: f64, cfg: &SynthConfig, rng: &mut impl Rng) -> Result<Vec<CameraView>> {
    let k = Intrinsics::with_fov(cfg.width, cfg.height, cfg.horizontal_fov);
    (0..cfg.views_per_object)
        .map(|i| {
            let az = start + i as f64 * cfg.view_spread;
            let dist = rng.random_range(cfg.camera_distance.0..=cfg.camera_distance.1);
            let h = rng.random_range(cfg.camera_height.0..=cfg.camera_height.1);
            let eye = Vec3::new(target.x + dist * az.cos(), target.y + dist * az.sin(), h);
            CameraView::look_at(k, eye, target, Vec3::z())
        })
        .collect()
}

/// A scene with one object per entry of `cad_ids`, drawn from `db`.
pub fn synthetic_scene(
    scene_id: &str,
    db: &CadDatabase,
    cad_ids: &[String],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<(Scene, Vec<GroundTruth>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let mut truth = Vec::new();
    let mut meshes = Vec::new();
    for (i, cad_id) in cad_ids.iter().enumerate() {
        let model = db.get(cad_id)?;
        let class = model.class_label().to_string();
        let radius = class_dimensions(&class).xy().norm() / 2.0 * (1.0 + cfg.scale_jitter);
        let mut center = None;
        for _ in 0..1000 {
            let x = rng.random_range(-cfg.room_half_size..cfg.room_half_size);
            let y = rng.random_range(-cfg.room_half_size..cfg.room_half_size);
            if placed
                .iter()
                .all(|&(px, py, pr)| ((px - x).powi(2) + (py - y).powi(2)).sqrt() > pr + radius + 0.3)
            {
                center = Some((x, y));
                break;
            }
        }
        let (x, y) = center.ok_or_else(|| Error::InvalidConfig("room too small for the requested objects".into()))?;
        placed.push((x, y, radius));
        let pose = random_pose(&class, (x, y), cfg.scale_jitter, &mut rng);
        meshes.push(apply_pose(model.mesh(), &pose));
        truth.push(GroundTruth {
            instance_id: format!("obj{i}"),
            class_label: class,
            cad_id: cad_id.clone(),
            pose,
        });
    }
    let mut objects = Vec::with_capacity(truth.len());
    for (i, gt) in truth.iter().enumerate() {
        let start = rng.random_range(0.0..TAU);
        let views = object_views(gt.pose.translation(), start, cfg, &mut rng)?;
        let (points, views) = observe(&meshes, i, &views)?;
        objects.push(SceneObject {
            instance_id: gt.instance_id.clone(),
            class_label: gt.class_label.clone(),
            points,
            partial_mesh: None,
            views,
        });
    }
    Ok((
        Scene {
            scene_id: scene_id.to_string(),
            objects,
        },
        truth,
    ))
}

/// Random draw of `n` models from `db` (with repetition), ordered by draw.
pub fn draw_models(db: &CadDatabase, n: usize, rng: &mut impl Rng) -> Vec<String> {
    (0..n)
        .map(|_| db.models()[rng.random_range(0..db.len())].id().to_string())
        .collect()
}

/// Ground truth as a verified annotation file, symmetry classified at the true scale.
pub fn ground_truth_file(scene_id: &str, db: &CadDatabase, truth: &[GroundTruth]) -> Result<AnnotationFile> {
    let mut annotations = Vec::with_capacity(truth.len());
    for gt in truth {
        let model = db.get(&gt.cad_id)?;
        let mut ann = Annotation::new(
            &gt.instance_id,
            &gt.class_label,
            &gt.cad_id,
            model.class_label(),
            gt.pose,
            None,
            ProvenanceEvent {
                kind: EventKind::Search,
                detail: "synthetic ground truth".into(),
            },
        );
        ann.symmetry = annotation_symmetry(db, &ann)?;
        ann.status = Status::Verified;
        annotations.push(ann);
    }
    Ok(AnnotationFile::new(scene_id, annotations, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_class_builds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for class in CLASSES {
            for _ in 0..5 {
                let mesh = class_shape(class, &mut rng).unwrap();
                let (lo, hi) = mesh.bounds().unwrap();
                assert!(
                    (lo - Vec3::repeat(-0.5)).norm() < 1e-9 && (hi - Vec3::repeat(0.5)).norm() < 1e-9,
                    "{class}"
                );
            }
        }
        assert!(class_shape("spaceship", &mut rng).is_err());
    }

    #[test]
    fn database_ids_and_classes() {
        let db = synthetic_database(&["chair", "sofa"], 3, 7).unwrap();
        assert_eq!(db.len(), 6);
        assert_eq!(db.of_class("sofa").len(), 3);
        assert!(db.get("chair_002").is_ok());
    }

    #[test]
    fn scene_objects_are_observed() {
        let db = synthetic_database(&["chair", "cabinet"], 2, 3).unwrap();
        let ids: Vec<String> = vec!["chair_000".into(), "cabinet_001".into(), "chair_001".into()];
        let (scene, truth) = synthetic_scene("s", &db, &ids, &SynthConfig::default(), 5).unwrap();
        assert_eq!(scene.objects.len(), 3);
        for (obj, gt) in scene.objects.iter().zip(&truth) {
            assert_eq!(obj.views.len(), 3);
            assert!(obj.points.len() > 100, "{}", obj.points.len());
            // Observed points lie on the ground-truth model surface.
            let posed = apply_pose(db.get(&gt.cad_id).unwrap().mesh(), &gt.pose);
            for p in obj.points.subsample(50).points() {
                assert!(posed.distance_to(p) < 1e-6);
            }
        }
    }

    #[test]
    fn scene_is_deterministic() {
        let db = synthetic_database(&["sofa"], 2, 3).unwrap();
        let ids = vec!["sofa_000".to_string(), "sofa_001".to_string()];
        let a = synthetic_scene("s", &db, &ids, &SynthConfig::default(), 9).unwrap();
        let b = synthetic_scene("s", &db, &ids, &SynthConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }
}
