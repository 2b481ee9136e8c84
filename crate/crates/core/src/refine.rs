//! Continuous 9-DoF pose refinement with Adam on finite-difference gradients.
//!
//! Parameters are `[t (3), δr (3), ln s (3)]`. Rotation steps are taken in the
//! tangent space at the current rotation (`R ← exp(δr)·R`), so the axis-angle
//! wrap at π never disturbs the optimizer.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cad::CadModel;
use crate::error::{Error, Result};
use crate::geometry::{Pose9D, Vec3};
use crate::objective::{rc_score, Observation, RcScore, RcWeights};

pub const PARAM_NAMES: [&str; 9] = ["tx", "ty", "tz", "rx", "ry", "rz", "log_sx", "log_sy", "log_sz"];

/// One value per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupScalars {
    pub translation: f64,
    pub rotation: f64,
    pub log_scale: f64,
}

impl GroupScalars {
    fn expand(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (i, v) in out.iter_mut().enumerate() {
            *v = match i / 3 {
                0 => self.translation,
                1 => self.rotation,
                _ => self.log_scale,
            };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub steps: usize,
    pub learning_rates: GroupScalars,
    pub fd_epsilons: GroupScalars,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Steps without a new best before returning to the best pose with half the step size.
    pub patience: usize,
    /// Stop once the step size has been halved this many times.
    pub max_halvings: u32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            steps: 300,
            learning_rates: GroupScalars {
                translation: 0.01,
                rotation: 1f64.to_radians(),
                log_scale: 0.01,
            },
            fd_epsilons: GroupScalars {
                translation: 0.005,
                rotation: 0.5f64.to_radians(),
                log_scale: 0.005,
            },
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            patience: 10,
            max_halvings: 6,
        }
    }
}

impl RefineConfig {
    pub fn with_steps(steps: usize) -> Self {
        RefineConfig {
            steps,
            ..RefineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidConfig("refine steps must be at least 1".into()));
        }
        let eps = self.fd_epsilons.expand();
        if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidConfig(
                "finite-difference epsilons must be positive".into(),
            ));
        }
        if self
            .learning_rates
            .expand()
            .iter()
            .any(|l| !(*l >= 0.0 && l.is_finite()))
        {
            return Err(Error::InvalidConfig("learning rates must be non-negative".into()));
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("adam_eps must be positive".into()));
        }
        if self.patience < 1 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub step: usize,
    pub score: RcScore,
    pub pose: Pose9D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub pose: Pose9D,
    pub score: RcScore,
    pub initial_score: RcScore,
    pub history: Vec<RefineStep>,
    /// True when a deadline cut the run short.
    pub timed_out: bool,
}

impl RefineResult {
    /// History as CSV with columns `step,total,dpt,sil,cd`.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("step,total,dpt,sil,cd\n");
        for h in &self.history {
            let s = &h.score;
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                h.step, s.total, s.dpt_term, s.sil_term, s.cd_term
            );
        }
        out
    }
}

/// Pose displaced by a parameter-space offset from `base`.
pub fn offset_pose(base: &Pose9D, delta: &[f64; 9]) -> Result<Pose9D> {
    let t = base.translation() + Vec3::new(delta[0], delta[1], delta[2]);
    let dr = Rotation3::new(Vector3::new(delta[3], delta[4], delta[5]));
    let rot = dr.matrix() * base.rotation_matrix();
    let s = base.scale();
    let scale = Vec3::new(s.x * delta[6].exp(), s.y * delta[7].exp(), s.z * delta[8].exp());
    Pose9D::from_rotation_matrix(t, &rot, scale)
}

fn evaluate(obs: &Observation, model: &CadModel, pose: &Pose9D, weights: &RcWeights) -> Result<RcScore> {
    rc_score(obs, model, pose, weights)
}

/// Central differences of the weighted score around `pose`.
pub fn fd_gradient(
    obs: &Observation,
    model: &CadModel,
    pose: &Pose9D,
    weights: &RcWeights,
    epsilons: &GroupScalars,
) -> Result<[f64; 9]> {
    let eps = epsilons.expand();
    let mut grad = [0.0; 9];
    for i in 0..9 {
        let mut values = [0.0; 2];
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut delta = [0.0; 9];
            delta[i] = sign * eps[i];
            let probe = offset_pose(pose, &delta)?;
            let total = evaluate(obs, model, &probe, weights)
                .map_err(|e| Error::NonFinite(format!("objective at {} probe: {e}", PARAM_NAMES[i])))?
                .total;
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("objective at {} probe", PARAM_NAMES[i])));
            }
            values[k] = total;
        }
        grad[i] = (values[0] - values[1]) / (2.0 * eps[i]);
    }
    Ok(grad)
}

/// Refines `init` and returns the best pose visited (never worse than `init`).
pub fn refine(
    obs: &Observation,
    model: &CadModel,
    init: &Pose9D,
    weights: &RcWeights,
    cfg: &RefineConfig,
) -> Result<RefineResult> {
    refine_until(obs, model, init, weights, cfg, None)
}

/// As [`refine`], stopping early (with the best so far) once `deadline` passes.
pub fn refine_until(
    obs: &Observation,
    model: &CadModel,
    init: &Pose9D,
    weights: &RcWeights,
    cfg: &RefineConfig,
    deadline: Option<Instant>,
) -> Result<RefineResult> {
    cfg.validate()?;
    let initial_score = evaluate(obs, model, init, weights).map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} at the initial pose")),
        other => other,
    })?;
    let lr = cfg.learning_rates.expand();
    let mut best = (initial_score, *init);
    let mut current = *init;
    let mut m = [0.0; 9];
    let mut v = [0.0; 9];
    let mut t = 0i32;
    let mut factor = 1.0;
    let mut halvings = 0;
    let mut since_best = 0;
    let mut history = Vec::with_capacity(cfg.steps);
    let mut timed_out = false;

    for step in 1..=cfg.steps {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            timed_out = true;
            break;
        }
        if lr.iter().all(|&l| l == 0.0) {
            history.push(RefineStep {
                step,
                score: best.0,
                pose: best.1,
            });
            continue;
        }
        let grad = fd_gradient(obs, model, &current, weights, &cfg.fd_epsilons)?;
        t += 1;
        let mut delta = [0.0; 9];
        for i in 0..9 {
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * grad[i];
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
            let m_hat = m[i] / (1.0 - cfg.adam_beta1.powi(t));
            let v_hat = v[i] / (1.0 - cfg.adam_beta2.powi(t));
            delta[i] = -factor * lr[i] * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        current = offset_pose(&current, &delta)?;
        let score = evaluate(obs, model, &current, weights)?;
        history.push(RefineStep {
            step,
            score,
            pose: current,
        });
        if score.total < best.0.total {
            best = (score, current);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                halvings += 1;
                if halvings > cfg.max_halvings {
                    break;
                }
                factor *= 0.5;
                current = best.1;
                m = [0.0; 9];
                v = [0.0; 9];
                t = 0;
                since_best = 0;
            }
        }
    }
    Ok(RefineResult {
        pose: best.1,
        score: best.0,
        initial_score,
        history,
        timed_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{assemble, cuboid};
    use crate::geometry::{apply_pose, sample_surface};
    use crate::render::{CameraView, Intrinsics};

    fn setup() -> (Observation, CadModel, Pose9D) {
        let mesh = assemble(&[
            cuboid(Vec3::new(0.0, 0.0, -0.3), Vec3::new(0.5, 0.5, 0.2)),
            cuboid(Vec3::new(0.3, 0.0, 0.2), Vec3::new(0.2, 0.5, 0.3)),
        ]);
        let model = CadModel::new("m", "thing", &mesh).unwrap();
        let gt = Pose9D::new(
            Vec3::new(0.2, -0.1, 0.4),
            Vec3::new(0.0, 0.0, 0.7),
            Vec3::new(0.6, 0.4, 0.8),
        )
        .unwrap();
        let posed = apply_pose(model.mesh(), &gt);
        let k = Intrinsics::with_fov(96, 72, 60f64.to_radians());
        let views: Vec<CameraView> = [Vec3::new(2.5, 0.5, 1.8), Vec3::new(-0.5, 2.5, 1.6)]
            .iter()
            .map(|&eye| CameraView::look_at(k, eye, gt.translation(), Vec3::z()).unwrap())
            .collect();
        let scan = sample_surface(&posed, 800, 3).unwrap();
        let obs = Observation::new(&views, Some(&posed), &scan, 256).unwrap();
        (obs, model, gt)
    }

    #[test]
    fn offset_pose_zero_is_identity() {
        let p = Pose9D::new(
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::new(0.1, 0.2, 0.3),
            Vec3::new(1.0, 2.0, 0.5),
        )
        .unwrap();
        let q = offset_pose(&p, &[0.0; 9]).unwrap();
        assert!((q.linear() - p.linear()).norm() < 1e-12);
        assert!((q.translation() - p.translation()).norm() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let (obs, model, gt) = setup();
        let init = offset_pose(&gt, &[0.05, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.0]).unwrap();
        let cfg = RefineConfig {
            steps: 1,
            learning_rates: GroupScalars {
                translation: 0.0,
                rotation: 0.0,
                log_scale: 0.0,
            },
            ..RefineConfig::default()
        };
        let res = refine(&obs, &model, &init, &RcWeights::default(), &cfg).unwrap();
        assert_eq!(res.pose, init);
        assert_eq!(res.score, res.initial_score);
    }

    #[test]
    fn recovers_from_perturbation() {
        let (obs, model, gt) = setup();
        let init = offset_pose(&gt, &[0.06, -0.05, 0.03, 0.0, 0.0, 0.12, 0.08, -0.06, 0.05]).unwrap();
        let res = refine(&obs, &model, &init, &RcWeights::default(), &RefineConfig::default()).unwrap();
        assert!(res.score.total <= res.initial_score.total);
        assert!(
            (res.pose.translation() - gt.translation()).norm() < 0.03,
            "{:?}",
            res.pose
        );
        let angle = crate::geometry::rotation_angle_between(&res.pose.quaternion(), &gt.quaternion());
        assert!(angle < 3f64.to_radians(), "{}", angle.to_degrees());
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let (obs, model, gt) = setup();
        let res = refine(&obs, &model, &gt, &RcWeights::default(), &RefineConfig::with_steps(3)).unwrap();
        let csv = res.history_csv();
        assert!(csv.starts_with("step,total,dpt,sil,cd\n"));
        assert_eq!(csv.lines().count(), res.history.len() + 1);
    }

    #[test]
    fn rejects_bad_config() {
        let (obs, model, gt) = setup();
        let bad = RefineConfig {
            steps: 0,
            ..RefineConfig::default()
        };
        assert!(refine(&obs, &model, &gt, &RcWeights::default(), &bad).is_err());
        let bad = RefineConfig {
            adam_beta1: 1.0,
            ..RefineConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn expired_deadline_returns_initial() {
        let (obs, model, gt) = setup();
        let res = refine_until(
            &obs,
            &model,
            &gt,
            &RcWeights::default(),
            &RefineConfig::default(),
            Some(Instant::now()),
        )
        .unwrap();
        assert!(res.timed_out);
        assert_eq!(res.pose, gt);
    }
}
