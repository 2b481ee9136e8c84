//! Scene annotation: pose initialization, per-object search, cloning and
//! symmetry classification.

mod annotation;
mod clone;
mod symmetry;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cad::{stable_seed, CadDatabase, CadModel};
use crate::error::{Error, Result};
use crate::geometry::hull2d::min_area_rect_angle;
use crate::geometry::{yaw_rotation, PointCloud, Pose9D, Vec3};
use crate::hoctree::HocTree;
use crate::objective::{rc_score, Observation, RcWeights, DEFAULT_MAX_SCAN_POINTS};
use crate::scene::{Scene, SceneObject};
use crate::search::{search, SearchConfig};

pub use annotation::{
    Annotation, AnnotationFile, EventKind, Failure, ProvenanceEvent, Status, Symmetry, ANNOTATION_SCHEMA_VERSION,
};
pub use clone::{
    cluster_and_clone, complete_linkage, model_distance, CloneCluster, CloneConfig, DEFAULT_CLONE_CLASSES,
};
pub use symmetry::{
    classify_symmetry, mesh_fingerprint, normalize_diagonal, rotation_chamfers, symmetry_from_chamfers,
    SYMMETRY_SAMPLES, SYMMETRY_THRESHOLD,
};

/// Gravity-aligned box around the segmented points.
///
/// The vertical range gives height; the horizontal footprint is boxed by its
/// minimum-area rectangle, whose longer side sets the azimuth. Scale is the
/// full box size, since canonical models span the unit box.
pub fn init_pose(points: &PointCloud) -> Result<Pose9D> {
    points.require_non_empty()?;
    let flat: Vec<(f64, f64)> = points.points().iter().map(|p| (p.x, p.y)).collect();
    let mut azimuth = min_area_rect_angle(&flat);
    let range = |az: f64| {
        let (s, c) = az.sin_cos();
        flat.iter()
            .map(|&(x, y)| c * x + s * y)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (mut ra, mut rb) = (range(azimuth), range(azimuth + FRAC_PI_2));
    if rb.1 - rb.0 > ra.1 - ra.0 {
        azimuth += FRAC_PI_2;
        ra = range(azimuth);
        rb = range(azimuth + FRAC_PI_2);
    }
    let (zlo, zhi) = points
        .points()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.z), hi.max(p.z))
        });
    let size = Vec3::new(ra.1 - ra.0, rb.1 - rb.0, zhi - zlo);
    if size.iter().any(|&s| !(s > 1e-9)) {
        return Err(Error::DegenerateGeometry(format!(
            "degenerate point set with extents {:?}",
            size.as_slice()
        )));
    }
    let (s, c) = azimuth.sin_cos();
    let (mid_a, mid_b) = ((ra.0 + ra.1) / 2.0, (rb.0 + rb.1) / 2.0);
    let center = Vec3::new(c * mid_a - s * mid_b, s * mid_a + c * mid_b, (zlo + zhi) / 2.0);
    let rot: Matrix3<f64> = yaw_rotation(azimuth).to_rotation_matrix().into_inner();
    Pose9D::from_rotation_matrix(center, &rot, size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub search: SearchConfig,
    pub weights: RcWeights,
    pub max_scan_points: usize,
    pub clone: CloneConfig,
    pub clone_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            search: SearchConfig::default(),
            weights: RcWeights::default(),
            max_scan_points: DEFAULT_MAX_SCAN_POINTS,
            clone: CloneConfig::default(),
            clone_enabled: true,
        }
    }
}

/// Prepared comparison targets for one object.
pub fn observe_object(obj: &SceneObject, max_scan_points: usize) -> Result<Observation> {
    obj.validate()?;
    Observation::new(&obj.views, obj.partial_mesh.as_ref(), &obj.points, max_scan_points).map_err(|e| match e {
        Error::NoObservations => Error::Unobservable("no view holds depth for the object".into()),
        other => other,
    })
}

fn annotate_object(
    obj: &SceneObject,
    db: &CadDatabase,
    trees: &BTreeMap<String, HocTree>,
    cfg: &PipelineConfig,
) -> Result<(Annotation, Observation)> {
    let tree = trees
        .get(&obj.class_label)
        .ok_or_else(|| Error::EmptyClass(format!("{} (no tree for this class)", obj.class_label)))?;
    let obs = observe_object(obj, cfg.max_scan_points)?;
    let init = init_pose(&obj.points)?;
    let scfg = SearchConfig {
        seed: cfg.search.seed ^ stable_seed(&obj.instance_id),
        ..cfg.search
    };
    let res = search(tree, db, &obs, &init, &cfg.weights, &scfg)?;
    let cad_class = db.get(&res.cad_id)?.class_label().to_string();
    let detail = format!(
        "iterations={} refinements={} pose_bin={}",
        res.iterations_run, res.refinements_run, res.pose_bin
    );
    let ann = Annotation::new(
        &obj.instance_id,
        &obj.class_label,
        &res.cad_id,
        cad_class,
        res.pose,
        Some(res.score),
        ProvenanceEvent {
            kind: EventKind::Search,
            detail,
        },
    );
    Ok((ann, obs))
}

/// For a model whose canonical shape survives a quarter turn, the pose with
/// its x scale along the longer footprint side. Both describe the same
/// geometry; fixing one keeps rotation comparisons meaningful.
pub fn canonical_footprint(model: &CadModel, pose: &Pose9D) -> Result<Option<Pose9D>> {
    let s = pose.scale();
    if s.x >= s.y {
        return Ok(None);
    }
    match classify_symmetry(model.mesh())? {
        Symmetry::FourFold | Symmetry::Infinite => Ok(Some(pose.with_yaw_offset(FRAC_PI_2))),
        _ => Ok(None),
    }
}

/// Up-axis symmetry of a model at the annotation's scale.
pub fn annotation_symmetry(db: &CadDatabase, ann: &Annotation) -> Result<Symmetry> {
    let model = db.get(&ann.cad_id)?;
    let s = ann.pose.scale();
    classify_symmetry(&model.mesh().map_vertices(|v| v.component_mul(&s)))
}

/// Annotates every object of the scene; failures are logged per object.
pub fn annotate_scene(
    scene: &Scene,
    db: &CadDatabase,
    trees: &BTreeMap<String, HocTree>,
    cfg: &PipelineConfig,
) -> Result<AnnotationFile> {
    cfg.weights.validate()?;
    cfg.search.validate()?;
    let results: Vec<Result<(Annotation, Observation)>> = scene
        .objects
        .par_iter()
        .map(|obj| annotate_object(obj, db, trees, cfg))
        .collect();

    let mut annotations = Vec::new();
    let mut observations = Vec::new();
    let mut failures = Vec::new();
    for (obj, res) in scene.objects.iter().zip(results) {
        match res {
            Ok((ann, obs)) => {
                tracing::info!(instance = %obj.instance_id, cad = %ann.cad_id, "annotated");
                annotations.push(ann);
                observations.push(obs);
            }
            Err(e) => {
                tracing::warn!(instance = %obj.instance_id, error = %e, "object skipped");
                failures.push(Failure {
                    instance_id: obj.instance_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    if cfg.clone_enabled {
        cluster_and_clone(&mut annotations, &observations, db, &cfg.weights, &cfg.clone)?;
    }
    for (ann, obs) in annotations.iter_mut().zip(&observations) {
        let model = db.get(&ann.cad_id)?;
        if let Some(pose) = canonical_footprint(model, &ann.pose)? {
            let score = rc_score(obs, model, &pose, &cfg.weights)?;
            ann.apply_equivalent_pose(pose, score, "quarter turn to long x side".into())?;
        }
    }
    let symmetries: Vec<Result<Symmetry>> = annotations.par_iter().map(|a| annotation_symmetry(db, a)).collect();
    for (ann, sym) in annotations.iter_mut().zip(symmetries) {
        ann.set_symmetry(sym?);
    }
    Ok(AnnotationFile::new(&scene.scene_id, annotations, failures))
}
