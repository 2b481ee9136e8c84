//! Alignment accuracy, retrieval-aware accuracy, completion metrics and the
//! latent-space loss.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_angle_between, yaw_rotation, PointCloud, Pose9D};
use crate::metrics::{chamfer, emd, ChamferDirection, EmdMode, EXACT_EMD_CAP};
use crate::pipeline::{Annotation, AnnotationFile, Status, Symmetry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleErrorMode {
    /// Largest per-axis deviation of the scale ratio from 1.
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentThresholds {
    pub translation_max: f64,
    pub rotation_max_deg: f64,
    pub scale_ratio_max: f64,
    #[serde(default)]
    pub scale_mode: ScaleErrorMode,
}

impl Default for AlignmentThresholds {
    fn default() -> Self {
        AlignmentThresholds {
            translation_max: 0.20,
            rotation_max_deg: 20.0,
            scale_ratio_max: 0.20,
            scale_mode: ScaleErrorMode::Max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBreakdown {
    pub class_match: bool,
    pub translation_error: f64,
    pub rotation_error_deg: f64,
    pub scale_error: f64,
    pub correct: bool,
}

/// Geodesic angle between the rotations, minimized over the ground truth's
/// symmetry group about its up axis.
pub fn rotation_error(pred: &UnitQuaternion<f64>, gt: &UnitQuaternion<f64>, symmetry: Symmetry) -> f64 {
    match symmetry.group_angles() {
        Some(angles) => angles
            .iter()
            .map(|&a| rotation_angle_between(pred, &(gt * yaw_rotation(a))))
            .fold(f64::INFINITY, f64::min),
        None => {
            // max over θ of tr(M·Rz(−θ)) for M = R_gᵀ R_p has a closed form.
            let m = (gt.inverse() * pred).to_rotation_matrix().into_inner();
            let best_trace = ((m[(0, 0)] + m[(1, 1)]).powi(2) + (m[(1, 0)] - m[(0, 1)]).powi(2)).sqrt() + m[(2, 2)];
            ((best_trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
        }
    }
}

/// Per-axis scale deviation, pairing each predicted axis with the ground-truth
/// axis it points along (so symmetric quarter turns compare matching sides).
pub fn scale_error(pred: &Pose9D, gt: &Pose9D, mode: ScaleErrorMode) -> f64 {
    let (rp, rg): (Matrix3<f64>, Matrix3<f64>) = (pred.rotation_matrix(), gt.rotation_matrix());
    let rel = rg.transpose() * rp;
    let (sp, sg) = (pred.scale(), gt.scale());
    let errors: Vec<f64> = (0..3)
        .map(|i| {
            let j = (0..3)
                .max_by(|&a, &b| rel[(a, i)].abs().total_cmp(&rel[(b, i)].abs()))
                .expect("three axes");
            (sp[i] / sg[j] - 1.0).abs()
        })
        .collect();
    match mode {
        ScaleErrorMode::Max => errors.iter().copied().fold(0.0, f64::max),
        ScaleErrorMode::Mean => errors.iter().sum::<f64>() / 3.0,
    }
}

pub fn alignment_breakdown(pred: &Annotation, gt: &Annotation, th: &AlignmentThresholds) -> Result<AlignmentBreakdown> {
    if pred.instance_id != gt.instance_id {
        return Err(Error::InstanceMismatch(
            pred.instance_id.clone(),
            gt.instance_id.clone(),
        ));
    }
    let class_match = pred.class_label == gt.class_label;
    let translation_error = (pred.pose.translation() - gt.pose.translation()).norm();
    let rotation_error_deg = rotation_error(&pred.pose.quaternion(), &gt.pose.quaternion(), gt.symmetry).to_degrees();
    let scale_error = scale_error(&pred.pose, &gt.pose, th.scale_mode);
    let correct = class_match
        && translation_error <= th.translation_max
        && rotation_error_deg <= th.rotation_max_deg
        && scale_error <= th.scale_ratio_max;
    Ok(AlignmentBreakdown {
        class_match,
        translation_error,
        rotation_error_deg,
        scale_error,
        correct,
    })
}

pub fn alignment_correct(pred: &Annotation, gt: &Annotation, th: &AlignmentThresholds) -> Result<bool> {
    Ok(alignment_breakdown(pred, gt, th)?.correct)
}

/// Alignment correct and the retrieved model's class equals the ground-truth model's class.
pub fn retrieval_aware_correct(pred: &Annotation, gt: &Annotation, th: &AlignmentThresholds) -> Result<bool> {
    Ok(alignment_correct(pred, gt, th)? && pred.cad_class == gt.cad_class)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    /// Mean symmetric squared chamfer, times 10⁴.
    pub cd_x1e4: f64,
    /// Mean EMD, times 10².
    pub emd_x1e2: f64,
    pub pairs: usize,
}

/// Mean chamfer and EMD over paired clouds; exact EMD up to the assignment cap.
pub fn completion_report(pred: &[PointCloud], gt: &[PointCloud]) -> Result<CompletionReport> {
    if pred.len() != gt.len() {
        return Err(Error::SizeMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (mut cd, mut em) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        cd += chamfer(p, g, ChamferDirection::Symmetric)?.value;
        let mode = if p.len() <= EXACT_EMD_CAP {
            EmdMode::ExactAssignment
        } else {
            EmdMode::Approximate
        };
        em += emd(p, g, mode)?.value;
    }
    let n = pred.len() as f64;
    Ok(CompletionReport {
        cd_x1e4: cd / n * 1e4,
        emd_x1e2: em / n * 1e2,
        pairs: pred.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentLoss {
    pub total: f64,
    pub mse_term: f64,
    pub kl_term: f64,
}

pub const DEFAULT_LAMBDA_MSE: f64 = 1.0;
pub const DEFAULT_LAMBDA_KL: f64 = 0.5;

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `λ_mse · MSE(z_p, z_c) + λ_kl · KL(softmax(z_c) ‖ softmax(z_p))`.
pub fn latent_loss(z_p: &[f64], z_c: &[f64], lambda_mse: f64, lambda_kl: f64) -> Result<LatentLoss> {
    if z_p.len() != z_c.len() {
        return Err(Error::DimensionMismatch(z_p.len(), z_c.len()));
    }
    if z_p.is_empty() {
        return Err(Error::DimensionMismatch(0, 0));
    }
    if z_p.iter().chain(z_c).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("latent vector".into()));
    }
    let n = z_p.len() as f64;
    let mse_term = z_p.iter().zip(z_c).map(|(p, c)| (p - c).powi(2)).sum::<f64>() / n;
    let (lp, lc) = (log_softmax(z_p), log_softmax(z_c));
    let kl_term = lc.iter().zip(&lp).map(|(c, p)| c.exp() * (c - p)).sum::<f64>().max(0.0);
    Ok(LatentLoss {
        total: lambda_mse * mse_term + lambda_kl * kl_term,
        mse_term,
        kl_term,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub instance_id: String,
    pub class_label: String,
    /// Absent when no prediction exists for the instance.
    pub breakdown: Option<AlignmentBreakdown>,
    pub aligned: bool,
    pub retrieval_aware: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub aligned: usize,
    pub retrieval_aware: usize,
}

impl ClassStats {
    pub fn alignment_accuracy(&self) -> f64 {
        self.aligned as f64 / self.count as f64
    }

    pub fn retrieval_accuracy(&self) -> f64 {
        self.retrieval_aware as f64 / self.count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<String, ClassStats>,
    pub alignment_per_class: f64,
    pub alignment_per_instance: f64,
    pub retrieval_per_class: f64,
    pub retrieval_per_instance: f64,
    pub instances: Vec<InstanceResult>,
}

/// Scores predictions against ground truth; unmatched or removed predictions count as wrong.
pub fn evaluate(pred: &AnnotationFile, gt: &AnnotationFile, th: &AlignmentThresholds) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &Annotation> = pred
        .annotations
        .iter()
        .filter(|a| a.status != Status::Removed)
        .map(|a| (a.instance_id.as_str(), a))
        .collect();
    let mut per_class: BTreeMap<String, ClassStats> = BTreeMap::new();
    let mut instances = Vec::with_capacity(gt.annotations.len());
    for g in &gt.annotations {
        let (breakdown, aligned, retrieval_aware) = match by_id.get(g.instance_id.as_str()) {
            Some(p) => {
                let b = alignment_breakdown(p, g, th)?;
                (Some(b), b.correct, b.correct && p.cad_class == g.cad_class)
            }
            None => (None, false, false),
        };
        let stats = per_class.entry(g.class_label.clone()).or_default();
        stats.count += 1;
        stats.aligned += aligned as usize;
        stats.retrieval_aware += retrieval_aware as usize;
        instances.push(InstanceResult {
            instance_id: g.instance_id.clone(),
            class_label: g.class_label.clone(),
            breakdown,
            aligned,
            retrieval_aware,
        });
    }
    let n = instances.len().max(1) as f64;
    let classes = per_class.len().max(1) as f64;
    Ok(EvalReport {
        alignment_per_class: per_class.values().map(ClassStats::alignment_accuracy).sum::<f64>() / classes,
        retrieval_per_class: per_class.values().map(ClassStats::retrieval_accuracy).sum::<f64>() / classes,
        alignment_per_instance: instances.iter().filter(|i| i.aligned).count() as f64 / n,
        retrieval_per_instance: instances.iter().filter(|i| i.retrieval_aware).count() as f64 / n,
        per_class,
        instances,
    })
}

impl EvalReport {
    /// Plain-text table: one row per class, then the class and instance averages.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>10} {:>16}",
            "class", "count", "alignment", "retrieval-aware"
        );
        for (class, s) in &self.per_class {
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>9.1}% {:>15.1}%",
                class,
                s.count,
                100.0 * s.alignment_accuracy(),
                100.0 * s.retrieval_accuracy()
            );
        }
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>9.1}% {:>15.1}%",
            "per class",
            "",
            100.0 * self.alignment_per_class,
            100.0 * self.retrieval_per_class
        );
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>9.1}% {:>15.1}%",
            "per instance",
            self.instances.len(),
            100.0 * self.alignment_per_instance,
            100.0 * self.retrieval_per_instance
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::pipeline::{EventKind, ProvenanceEvent};

    fn ann(id: &str, class: &str, cad: &str, cad_class: &str, pose: Pose9D) -> Annotation {
        Annotation::new(
            id,
            class,
            cad,
            cad_class,
            pose,
            None,
            ProvenanceEvent {
                kind: EventKind::Search,
                detail: String::new(),
            },
        )
    }

    fn pose(t: Vec3, yaw_deg: f64, s: Vec3) -> Pose9D {
        Pose9D::new(t, Vec3::new(0.0, 0.0, yaw_deg.to_radians()), s).unwrap()
    }

    #[test]
    fn exact_prediction() {
        let g = ann(
            "a",
            "chair",
            "c1",
            "chair",
            pose(Vec3::new(1.0, 2.0, 0.4), 30.0, Vec3::new(0.5, 0.5, 0.9)),
        );
        let b = alignment_breakdown(&g, &g, &AlignmentThresholds::default()).unwrap();
        assert!(b.correct);
        assert_eq!(b.translation_error, 0.0);
        assert!(b.rotation_error_deg < 1e-6);
        assert_eq!(b.scale_error, 0.0);
    }

    #[test]
    fn near_threshold_is_correct() {
        let g = ann(
            "a",
            "chair",
            "c1",
            "chair",
            pose(Vec3::zeros(), 0.0, Vec3::new(1.0, 1.0, 1.0)),
        );
        let p = ann(
            "a",
            "chair",
            "c2",
            "chair",
            pose(Vec3::new(0.19, 0.0, 0.0), 19.0, Vec3::new(1.19, 1.19, 1.19)),
        );
        assert!(alignment_correct(&p, &g, &AlignmentThresholds::default()).unwrap());
        assert!(retrieval_aware_correct(&p, &g, &AlignmentThresholds::default()).unwrap());
        let far = ann(
            "a",
            "chair",
            "c1",
            "chair",
            pose(Vec3::new(0.21, 0.0, 0.0), 0.0, Vec3::repeat(1.0)),
        );
        assert!(!retrieval_aware_correct(&far, &g, &AlignmentThresholds::default()).unwrap());
        let other = ann("b", "chair", "c1", "chair", pose(Vec3::zeros(), 0.0, Vec3::repeat(1.0)));
        assert!(alignment_correct(&other, &g, &AlignmentThresholds::default()).is_err());
    }

    #[test]
    fn symmetry_reduces_rotation_error() {
        let mut g = ann(
            "a",
            "table",
            "t",
            "table",
            pose(Vec3::zeros(), 10.0, Vec3::new(1.0, 1.0, 0.7)),
        );
        let p = ann(
            "a",
            "table",
            "t",
            "table",
            pose(Vec3::zeros(), 100.0, Vec3::new(1.0, 1.0, 0.7)),
        );
        let th = AlignmentThresholds::default();
        assert!(!alignment_correct(&p, &g, &th).unwrap());
        g.symmetry = Symmetry::FourFold;
        let b = alignment_breakdown(&p, &g, &th).unwrap();
        assert!(b.rotation_error_deg < 1e-6 && b.correct);
        g.symmetry = Symmetry::Infinite;
        let p2 = ann(
            "a",
            "table",
            "t",
            "table",
            pose(Vec3::zeros(), 77.0, Vec3::new(1.0, 1.0, 0.7)),
        );
        assert!(alignment_breakdown(&p2, &g, &th).unwrap().rotation_error_deg < 1e-6);
    }

    #[test]
    fn quarter_turn_swaps_scale_axes() {
        let mut g = ann(
            "a",
            "table",
            "t",
            "table",
            pose(Vec3::zeros(), 0.0, Vec3::new(1.2, 0.8, 0.7)),
        );
        g.symmetry = Symmetry::TwoFold;
        let p = ann(
            "a",
            "table",
            "t",
            "table",
            pose(Vec3::zeros(), 180.0, Vec3::new(1.2, 0.8, 0.7)),
        );
        assert!(alignment_correct(&p, &g, &AlignmentThresholds::default()).unwrap());
        let q = ann(
            "a",
            "table",
            "t",
            "table",
            pose(Vec3::zeros(), 90.0, Vec3::new(0.8, 1.2, 0.7)),
        );
        assert!(scale_error(&q.pose, &g.pose, ScaleErrorMode::Max) < 1e-9);
    }

    #[test]
    fn completion_values() {
        let a = PointCloud::new(vec![Vec3::zeros()]);
        let b = PointCloud::new(vec![Vec3::new(0.01, 0.0, 0.0)]);
        let r = completion_report(std::slice::from_ref(&a), &[b]).unwrap();
        assert!((r.cd_x1e4 - 2.0).abs() < 1e-9);
        assert!((r.emd_x1e2 - 1.0).abs() < 1e-9);
        let same = completion_report(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap();
        assert_eq!((same.cd_x1e4, same.emd_x1e2), (0.0, 0.0));
        assert!(completion_report(std::slice::from_ref(&a), &[]).is_err());
    }

    #[test]
    fn latent_loss_cases() {
        let z = [0.3, -1.2, 2.0];
        assert_eq!(
            latent_loss(&z, &z, 1.0, 0.5).unwrap(),
            LatentLoss {
                total: 0.0,
                mse_term: 0.0,
                kl_term: 0.0
            }
        );
        let l = latent_loss(&[1.0, 1.0], &[0.0, 0.0], DEFAULT_LAMBDA_MSE, DEFAULT_LAMBDA_KL).unwrap();
        assert!((l.mse_term - 1.0).abs() < 1e-15 && l.kl_term.abs() < 1e-15 && (l.total - 1.0).abs() < 1e-15);
        let masked = latent_loss(&[1.0, 0.0], &[0.0, 2.0], 1.0, 0.0).unwrap();
        assert_eq!(masked.total, masked.mse_term);
        assert!(latent_loss(&[1.0], &[1.0, 2.0], 1.0, 0.5).is_err());
    }

    #[test]
    fn report_aggregation() {
        let mk = |id: &str, class: &str, x: f64| {
            ann(
                id,
                class,
                "m",
                class,
                pose(Vec3::new(x, 0.0, 0.0), 0.0, Vec3::repeat(1.0)),
            )
        };
        let gt = AnnotationFile::new(
            "s",
            vec![mk("a", "chair", 0.0), mk("b", "chair", 0.0), mk("c", "sofa", 0.0)],
            vec![],
        );
        let pred = AnnotationFile::new("s", vec![mk("a", "chair", 0.0), mk("b", "chair", 1.0)], vec![]);
        let r = evaluate(&pred, &gt, &AlignmentThresholds::default()).unwrap();
        assert!((r.alignment_per_instance - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.alignment_per_class - 0.25).abs() < 1e-12);
        assert!(r.table().contains("per instance"));
    }
}
