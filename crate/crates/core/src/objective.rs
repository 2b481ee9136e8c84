//! Render-and-compare loss: weighted depth L1, silhouette mismatch and
//! single-direction chamfer, averaged over the object's observed views.

use serde::{Deserialize, Serialize};

use crate::cad::CadModel;
use crate::error::{Error, Result};
use crate::geometry::{apply_pose, PointCloud, Pose9D, Vec3};
use crate::metrics::{squared_distance, KdTree};
use crate::render::{rasterize, render_target_views, CameraView, PixelRect, RenderOutput};

/// Depth penalty (meters) for a pixel covered by only one of the two renders.
pub const MISMATCH_PENALTY: f64 = 0.5;

/// Scan points used for the chamfer term unless configured otherwise.
pub const DEFAULT_MAX_SCAN_POINTS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdDirection {
    /// Observed points to the posed model surface; unobserved model parts are free.
    #[default]
    ScanToCad,
    CadToScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcWeights {
    pub lambda_dpt: f64,
    pub lambda_sil: f64,
    pub lambda_cd: f64,
    #[serde(default)]
    pub cd_direction: CdDirection,
}

impl Default for RcWeights {
    fn default() -> Self {
        RcWeights::new(1.0, 1.0, 1.0).expect("default weights are valid")
    }
}

impl RcWeights {
    pub fn new(lambda_dpt: f64, lambda_sil: f64, lambda_cd: f64) -> Result<Self> {
        let w = RcWeights {
            lambda_dpt,
            lambda_sil,
            lambda_cd,
            cd_direction: CdDirection::ScanToCad,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_dpt, self.lambda_sil, self.lambda_cd];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig("weights must be finite and non-negative".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig("at least one weight must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> RcWeights {
        RcWeights {
            lambda_dpt: self.lambda_dpt * factor,
            lambda_sil: self.lambda_sil * factor,
            lambda_cd: self.lambda_cd * factor,
            cd_direction: self.cd_direction,
        }
    }

    /// Parses `"d,s,c"`.
    pub fn parse_triplet(text: &str) -> Result<Self> {
        let parts: Vec<f64> = text
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidConfig(format!("bad weights '{text}'")))?;
        match parts.as_slice() {
            [d, s, c] => RcWeights::new(*d, *s, *c),
            _ => Err(Error::InvalidConfig(format!("expected three weights, got '{text}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcScore {
    pub total: f64,
    pub dpt_term: f64,
    pub sil_term: f64,
    pub cd_term: f64,
    pub views_used: usize,
}

impl RcScore {
    fn combine(weights: &RcWeights, dpt_term: f64, sil_term: f64, cd_term: f64, views_used: usize) -> Self {
        RcScore {
            total: weights.lambda_dpt * dpt_term + weights.lambda_sil * sil_term + weights.lambda_cd * cd_term,
            dpt_term,
            sil_term,
            cd_term,
            views_used,
        }
    }

    /// Same terms re-weighted.
    pub fn reweighted(&self, weights: &RcWeights) -> RcScore {
        RcScore::combine(weights, self.dpt_term, self.sil_term, self.cd_term, self.views_used)
    }
}

fn check_resolution(a: &RenderOutput, b: &RenderOutput) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::ResolutionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    Ok(())
}

fn support_rect(a: &RenderOutput, b: &RenderOutput) -> Option<PixelRect> {
    PixelRect::union(a.bounds(), b.bounds())
}

/// Mean depth disagreement over the union of both silhouettes.
///
/// Pixels valid in both contribute `|d_t − d_c|`; pixels valid in only one
/// contribute [`MISMATCH_PENALTY`]. Zero when both renders are empty.
pub fn depth_l1(target: &RenderOutput, candidate: &RenderOutput) -> Result<f64> {
    check_resolution(target, candidate)?;
    let Some(rect) = support_rect(target, candidate) else {
        return Ok(0.0);
    };
    let (td, cd) = (target.depth().data(), candidate.depth().data());
    let w = target.width();
    let (mut sum, mut count) = (0.0, 0usize);
    for v in rect.y0..rect.y1 {
        for i in v * w + rect.x0..v * w + rect.x1 {
            let (a, b) = (td[i], cd[i]);
            match (a > 0.0, b > 0.0) {
                (true, true) => {
                    sum += (a - b).abs();
                    count += 1;
                }
                (true, false) | (false, true) => {
                    sum += MISMATCH_PENALTY;
                    count += 1;
                }
                (false, false) => {}
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Intersection-over-union of two silhouettes; two empty masks have IoU 1.
pub fn silhouette_iou(target: &RenderOutput, candidate: &RenderOutput) -> Result<f64> {
    check_resolution(target, candidate)?;
    let Some(rect) = support_rect(target, candidate) else {
        return Ok(1.0);
    };
    let (ts, cs) = (target.silhouette(), candidate.silhouette());
    let w = target.width();
    let (mut inter, mut union) = (0usize, 0usize);
    for v in rect.y0..rect.y1 {
        for i in v * w + rect.x0..v * w + rect.x1 {
            inter += (ts[i] && cs[i]) as usize;
            union += (ts[i] || cs[i]) as usize;
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `1 − IoU`, so that a perfect overlap costs nothing.
pub fn silhouette_term(target: &RenderOutput, candidate: &RenderOutput) -> Result<f64> {
    Ok(1.0 - silhouette_iou(target, candidate)?)
}

/// Everything the objective needs from one segmented object, prepared once.
#[derive(Debug, Clone)]
pub struct Observation {
    views: Vec<CameraView>,
    targets: Vec<RenderOutput>,
    scan: Vec<Vec3>,
    scan_index: KdTree,
}

impl Observation {
    pub fn new(
        views: &[CameraView],
        partial_mesh: Option<&crate::geometry::TriMesh>,
        scan: &PointCloud,
        max_scan_points: usize,
    ) -> Result<Self> {
        scan.require_non_empty()?;
        let targets = render_target_views(views, partial_mesh)?;
        Self::from_targets(views.to_vec(), targets, scan, max_scan_points)
    }

    pub fn from_targets(
        views: Vec<CameraView>,
        targets: Vec<RenderOutput>,
        scan: &PointCloud,
        max_scan_points: usize,
    ) -> Result<Self> {
        scan.require_non_empty()?;
        if targets.len() != views.len() {
            return Err(Error::InvalidConfig("one target render per view required".into()));
        }
        if targets.iter().all(RenderOutput::is_empty) {
            return Err(Error::NoObservations);
        }
        for (v, t) in views.iter().zip(&targets) {
            if v.width() != t.width() || v.height() != t.height() {
                return Err(Error::ResolutionMismatch(t.width(), t.height(), v.width(), v.height()));
            }
        }
        let scan = scan.subsample(max_scan_points).into_points();
        let scan_index = KdTree::new(&scan);
        Ok(Observation {
            views,
            targets,
            scan,
            scan_index,
        })
    }

    pub fn views(&self) -> &[CameraView] {
        &self.views
    }

    pub fn targets(&self) -> &[RenderOutput] {
        &self.targets
    }

    pub fn scan(&self) -> &[Vec3] {
        &self.scan
    }
}

/// Scan-to-model chamfer without materializing posed samples.
///
/// For `x = A v + t` with `A = R·diag(s)`, the world distance to a posed
/// sample equals a diagonal-weighted distance in the canonical frame:
/// `‖A v + t − p‖² = Σ s_i² (v_i − q_i)²` with `q = diag(s)⁻¹ Rᵀ (p − t)`.
/// The nearest sample is found under that metric; its distance is then
/// evaluated in world space.
pub fn scan_to_model_chamfer(scan: &[Vec3], model: &CadModel, pose: &Pose9D) -> f64 {
    let rot = pose.rotation_matrix();
    let s = pose.scale();
    let weights = s.component_mul(&s);
    let linear = pose.linear();
    let t = pose.translation();
    let samples = model.samples().points();
    let mut sum = 0.0;
    for p in scan {
        let q = (rot.transpose() * (p - t)).component_div(&s);
        let (idx, _) = model.index().nearest_weighted(&q, &weights).expect("model has samples");
        let posed = linear * samples[idx] + t;
        sum += squared_distance(p, &posed);
    }
    sum / scan.len() as f64
}

fn model_to_scan_chamfer(obs: &Observation, model: &CadModel, pose: &Pose9D) -> f64 {
    let linear = pose.linear();
    let t = pose.translation();
    let samples = model.samples().points();
    let sum: f64 = samples
        .iter()
        .map(|v| obs.scan_index.nearest(&(linear * v + t)).expect("scan non-empty").1)
        .sum();
    sum / samples.len() as f64
}

/// Renders the posed model into every view holding an observation.
pub fn candidate_renders(obs: &Observation, model: &CadModel, pose: &Pose9D) -> Vec<Option<RenderOutput>> {
    let posed = apply_pose(model.mesh(), pose);
    obs.views
        .iter()
        .zip(&obs.targets)
        .map(|(view, target)| (!target.is_empty()).then(|| rasterize(&posed, view)))
        .collect()
}

/// The weighted render-and-compare score; lower is better.
pub fn rc_score(obs: &Observation, model: &CadModel, pose: &Pose9D, weights: &RcWeights) -> Result<RcScore> {
    let (mut dpt, mut sil, mut used) = (0.0, 0.0, 0usize);
    for (candidate, target) in candidate_renders(obs, model, pose).iter().zip(&obs.targets) {
        if let Some(candidate) = candidate {
            dpt += depth_l1(target, candidate)?;
            sil += silhouette_term(target, candidate)?;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::NoObservations);
    }
    let cd = match weights.cd_direction {
        CdDirection::ScanToCad => scan_to_model_chamfer(&obs.scan, model, pose),
        CdDirection::CadToScan => model_to_scan_chamfer(obs, model, pose),
    };
    let score = RcScore::combine(weights, dpt / used as f64, sil / used as f64, cd, used);
    if !score.total.is_finite() {
        return Err(Error::NonFinite("render-and-compare score".into()));
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::cuboid;
    use crate::metrics::{chamfer, ChamferDirection};
    use crate::render::{DepthMap, Intrinsics};
    use nalgebra::Isometry3;

    fn render_of(w: usize, h: usize, pixels: &[(usize, usize, f64)]) -> RenderOutput {
        let mut d = DepthMap::zeros(w, h);
        for &(u, v, z) in pixels {
            d.set(u, v, z);
        }
        RenderOutput::from_depth(d)
    }

    #[test]
    fn depth_l1_cases() {
        let a = render_of(4, 4, &[(0, 0, 1.0), (1, 0, 2.0)]);
        assert_eq!(depth_l1(&a, &a).unwrap(), 0.0);
        let shifted = render_of(4, 4, &[(0, 0, 1.1), (1, 0, 2.1)]);
        assert!((depth_l1(&a, &shifted).unwrap() - 0.1).abs() < 1e-12);
        let disjoint = render_of(4, 4, &[(2, 2, 1.0), (3, 3, 1.0)]);
        assert_eq!(depth_l1(&a, &disjoint).unwrap(), 0.5);
        let empty = render_of(4, 4, &[]);
        assert_eq!(depth_l1(&empty, &empty).unwrap(), 0.0);
        assert!(depth_l1(&a, &render_of(3, 4, &[])).is_err());
    }

    #[test]
    fn silhouette_cases() {
        let a = render_of(4, 4, &[(0, 0, 1.0), (1, 0, 1.0)]);
        assert_eq!(silhouette_term(&a, &a).unwrap(), 0.0);
        let disjoint = render_of(4, 4, &[(3, 3, 1.0)]);
        assert_eq!(silhouette_term(&a, &disjoint).unwrap(), 1.0);
        let shifted = render_of(4, 4, &[(1, 0, 1.0), (2, 0, 1.0)]);
        assert!((silhouette_term(&a, &shifted).unwrap() - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        let empty = render_of(4, 4, &[]);
        assert_eq!(silhouette_term(&empty, &empty).unwrap(), 0.0);
        assert!(silhouette_term(&a, &render_of(4, 5, &[])).is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(RcWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(RcWeights::new(-1.0, 1.0, 1.0).is_err());
        assert_eq!(RcWeights::parse_triplet("1, 0.5,2").unwrap().lambda_sil, 0.5);
        assert!(RcWeights::parse_triplet("1,2").is_err());
    }

    fn scene() -> (Observation, CadModel, Pose9D) {
        let model = CadModel::new("box", "cabinet", &cuboid(Vec3::zeros(), Vec3::new(0.5, 0.3, 0.4))).unwrap();
        let pose = Pose9D::new(Vec3::new(0.0, 0.0, 0.4), Vec3::z() * 0.3, Vec3::new(1.0, 0.6, 0.8)).unwrap();
        let k = Intrinsics::with_fov(96, 72, 1.1);
        let views: Vec<CameraView> = [Vec3::new(2.5, -0.5, 1.5), Vec3::new(-1.0, 2.5, 1.2)]
            .iter()
            .map(|eye| {
                let v = CameraView::look_at(k, *eye, Vec3::new(0.0, 0.0, 0.4), Vec3::z()).unwrap();
                let d = rasterize(&apply_pose(model.mesh(), &pose), &v).into_depth();
                v.with_depth(d).unwrap()
            })
            .collect();
        let scan: PointCloud = views
            .iter()
            .flat_map(|v| crate::render::backproject(v).unwrap().into_points())
            .collect();
        (Observation::new(&views, None, &scan, 400).unwrap(), model, pose)
    }

    #[test]
    fn ground_truth_scores_near_zero() {
        let (obs, model, pose) = scene();
        let s = rc_score(&obs, &model, &pose, &RcWeights::default()).unwrap();
        assert_eq!(s.views_used, 2);
        assert_eq!(s.dpt_term, 0.0);
        assert_eq!(s.sil_term, 0.0);
        assert!(s.cd_term < 1e-3);
        let moved = Pose9D::new(
            pose.translation() + Vec3::new(0.2, 0.0, 0.0),
            pose.rotation(),
            pose.scale(),
        )
        .unwrap();
        assert!(rc_score(&obs, &model, &moved, &RcWeights::default()).unwrap().total > s.total);
    }

    #[test]
    fn weight_masking_and_linearity() {
        let (obs, model, pose) = scene();
        let moved = Pose9D::new(
            pose.translation() + Vec3::new(0.05, 0.02, 0.0),
            pose.rotation(),
            pose.scale(),
        )
        .unwrap();
        let w = RcWeights::new(0.7, 1.3, 2.0).unwrap();
        let s = rc_score(&obs, &model, &moved, &w).unwrap();
        let d = rc_score(&obs, &model, &moved, &w.scaled(2.0)).unwrap();
        assert!((d.total - 2.0 * s.total).abs() < 1e-12);
        let only_depth = rc_score(&obs, &model, &moved, &RcWeights::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        assert_eq!(only_depth.total, only_depth.dpt_term);
    }

    #[test]
    fn indexed_chamfer_matches_explicit_samples() {
        let (obs, model, pose) = scene();
        let posed: PointCloud = model.samples().map(|v| pose.transform_point(v));
        let scan = PointCloud::new(obs.scan().to_vec());
        let explicit = chamfer(&scan, &posed, ChamferDirection::AToB).unwrap().value;
        let fast = scan_to_model_chamfer(obs.scan(), &model, &pose);
        assert!((explicit - fast).abs() < 1e-12, "{explicit} {fast}");
    }

    #[test]
    fn chamfer_only_on_coincident_points_is_zero() {
        let model = CadModel::with_samples("b", "c", &cuboid(Vec3::zeros(), Vec3::repeat(0.5)), 200).unwrap();
        let view = CameraView::new(Intrinsics::with_fov(32, 24, 1.0), Isometry3::translation(0.0, 0.0, 3.0)).unwrap();
        let target = rasterize(&apply_pose(model.mesh(), &Pose9D::identity()), &view);
        let obs = Observation::from_targets(vec![view], vec![target], model.samples(), 1000).unwrap();
        let s = rc_score(
            &obs,
            &model,
            &Pose9D::identity(),
            &RcWeights::new(0.0, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(s.total, 0.0);
    }
}
