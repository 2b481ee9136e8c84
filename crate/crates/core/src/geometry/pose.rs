use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::mesh::{TriMesh, Vec3};
use crate::error::{Error, Result};

/// Gravity direction is `-UP`; pose bins and symmetry groups rotate about `UP`.
pub const UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// 9-DoF placement of a canonical model: `x = R(rotation) · (scale ⊙ v) + translation`.
///
/// Rotation is an axis-angle vector, canonicalized to magnitude in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRecord", into = "PoseRecord")]
pub struct Pose9D {
    translation: Vec3,
    rotation: Vec3,
    scale: Vec3,
}

/// File representation: `{t, r_axis_angle, s}`.
#[derive(Serialize, Deserialize)]
struct PoseRecord {
    t: [f64; 3],
    r_axis_angle: [f64; 3],
    s: [f64; 3],
}

impl TryFrom<PoseRecord> for Pose9D {
    type Error = Error;

    fn try_from(r: PoseRecord) -> Result<Self> {
        Pose9D::new(r.t.into(), r.r_axis_angle.into(), r.s.into())
    }
}

impl From<Pose9D> for PoseRecord {
    fn from(p: Pose9D) -> Self {
        PoseRecord {
            t: p.translation.into(),
            r_axis_angle: p.rotation.into(),
            s: p.scale.into(),
        }
    }
}

impl Default for Pose9D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose9D {
    pub fn new(translation: Vec3, rotation: Vec3, scale: Vec3) -> Result<Self> {
        let finite = |v: &Vec3| v.iter().all(|c| c.is_finite());
        if !finite(&translation) || !finite(&rotation) || !finite(&scale) {
            return Err(Error::InvalidPose("non-finite component".into()));
        }
        if scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidPose(format!(
                "scale must be strictly positive, got {:?}",
                scale.as_slice()
            )));
        }
        Ok(Self {
            translation,
            rotation: canonical_axis_angle(&rotation),
            scale,
        })
    }

    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: Vec3::zeros(),
            scale: Vec3::repeat(1.0),
        }
    }

    pub fn from_rotation_matrix(translation: Vec3, rotation: &Matrix3<f64>, scale: Vec3) -> Result<Self> {
        let rot = Rotation3::from_matrix(rotation);
        Self::new(translation, rot.scaled_axis(), scale)
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn rotation(&self) -> Vec3 {
        self.rotation
    }

    pub fn scale(&self) -> Vec3 {
        self.scale
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Rotation3::new(self.rotation).into_inner()
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new(self.rotation)
    }

    /// `R · diag(scale)`.
    pub fn linear(&self) -> Matrix3<f64> {
        self.rotation_matrix() * Matrix3::from_diagonal(&self.scale)
    }

    pub fn transform_point(&self, v: &Vec3) -> Vec3 {
        self.linear() * v + self.translation
    }

    pub fn is_rigid(&self) -> bool {
        self.scale == Vec3::repeat(1.0)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.quaternion())
    }

    /// `rigid ∘ self`: the placement obtained by moving the posed model with a rigid motion.
    pub fn transformed_by(&self, rigid: &Isometry3<f64>) -> Pose9D {
        let rotation = rigid.rotation * self.quaternion();
        Pose9D {
            translation: rigid.transform_vector(&self.translation) + rigid.translation.vector,
            rotation: canonical_axis_angle(&rotation.scaled_axis()),
            scale: self.scale,
        }
    }

    /// Rotates the model inside its current placement by `angle` about the model's up axis.
    ///
    /// When the offset lands nearest an odd quarter turn, the horizontal scale
    /// components swap so the world-frame footprint stays the same.
    pub fn with_yaw_offset(&self, angle: f64) -> Pose9D {
        let r = self.quaternion() * UnitQuaternion::from_axis_angle(&nalgebra::Vector3::z_axis(), angle);
        let quarter = (angle / FRAC_PI_2).round() as i64;
        let scale = if quarter.rem_euclid(2) == 1 {
            Vec3::new(self.scale.y, self.scale.x, self.scale.z)
        } else {
            self.scale
        };
        Pose9D {
            translation: self.translation,
            rotation: canonical_axis_angle(&r.scaled_axis()),
            scale,
        }
    }

    /// Optimization parameters: translation, axis-angle, log-scale.
    pub fn to_params(&self) -> [f64; 9] {
        let t = self.translation;
        let r = self.rotation;
        let s = self.scale.map(f64::ln);
        [t.x, t.y, t.z, r.x, r.y, r.z, s.x, s.y, s.z]
    }

    pub fn from_params(p: &[f64; 9]) -> Result<Pose9D> {
        Pose9D::new(
            Vec3::new(p[0], p[1], p[2]),
            Vec3::new(p[3], p[4], p[5]),
            Vec3::new(p[6].exp(), p[7].exp(), p[8].exp()),
        )
    }
}

/// Maps an axis-angle vector to the equivalent one with angle in `[0, π]`.
pub fn canonical_axis_angle(r: &Vec3) -> Vec3 {
    let angle = r.norm();
    if angle <= PI {
        return *r;
    }
    Rotation3::new(*r).scaled_axis()
}

/// Geodesic angle between two rotations, radians in `[0, π]`.
pub fn rotation_angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}

pub fn apply_pose(mesh: &TriMesh, pose: &Pose9D) -> TriMesh {
    let linear = pose.linear();
    let t = pose.translation;
    mesh.map_vertices(|v| linear * v + t)
}

pub fn yaw_rotation(angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&nalgebra::Vector3::z_axis(), angle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square() -> TriMesh {
        TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn identity_is_identity() {
        let m = square();
        assert_eq!(apply_pose(&m, &Pose9D::identity()), m);
    }

    #[test]
    fn pure_translation() {
        let pose = Pose9D::new(Vec3::x(), Vec3::zeros(), Vec3::repeat(1.0)).unwrap();
        assert_eq!(pose.transform_point(&Vec3::zeros()), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn scale_then_rotate() {
        let pose = Pose9D::new(Vec3::zeros(), Vec3::z() * FRAC_PI_2, Vec3::repeat(2.0)).unwrap();
        let got = pose.transform_point(&Vec3::x());
        // Oracle: explicit matrix product R · (s ⊙ v).
        let r = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expected = r * Vec3::new(2.0, 0.0, 0.0);
        assert!((got - expected).norm() < 1e-12);
        assert!((got - Vec3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(Pose9D::new(Vec3::zeros(), Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0)).is_err());
        assert!(Pose9D::new(Vec3::zeros(), Vec3::zeros(), Vec3::new(1.0, -1.0, 1.0)).is_err());
    }

    #[test]
    fn canonicalizes_large_angles() {
        let p = Pose9D::new(Vec3::zeros(), Vec3::z() * (1.5 * PI), Vec3::repeat(1.0)).unwrap();
        assert!(p.rotation().norm() <= PI + 1e-12);
        let q = Pose9D::new(Vec3::zeros(), Vec3::z() * (-0.5 * PI), Vec3::repeat(1.0)).unwrap();
        assert!((p.rotation_matrix() - q.rotation_matrix()).norm() < 1e-12);
    }

    #[test]
    fn four_quarter_turns_restore_pose() {
        let p = Pose9D::new(
            Vec3::new(1.0, 2.0, 0.5),
            Vec3::new(0.1, -0.2, 0.7),
            Vec3::new(0.5, 1.5, 0.9),
        )
        .unwrap();
        let mut q = p;
        for _ in 0..4 {
            q = q.with_yaw_offset(FRAC_PI_2);
        }
        assert!((q.rotation_matrix() - p.rotation_matrix()).norm() < 1e-9);
        assert_eq!(q.scale(), p.scale());
        assert_eq!(q.translation(), p.translation());
    }

    #[test]
    fn quarter_turn_keeps_world_footprint() {
        let p = Pose9D::new(Vec3::zeros(), Vec3::z() * 0.3, Vec3::new(2.0, 1.0, 0.5)).unwrap();
        let q = p.with_yaw_offset(FRAC_PI_2);
        // Corner set of the posed unit box is preserved.
        let corners: Vec<Vec3> = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -0.5 } else { 0.5 },
                    if i & 2 == 0 { -0.5 } else { 0.5 },
                    if i & 4 == 0 { -0.5 } else { 0.5 },
                )
            })
            .collect();
        for c in &corners {
            let a = q.transform_point(c);
            let nearest = corners
                .iter()
                .map(|d| (p.transform_point(d) - a).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-12);
        }
    }

    #[test]
    fn serde_uses_record_layout() {
        let p = Pose9D::new(Vec3::x(), Vec3::zeros(), Vec3::repeat(2.0)).unwrap();
        let json = serde_json::to_value(p).unwrap();
        assert_eq!(json["t"][0], 1.0);
        assert_eq!(json["s"][2], 2.0);
        assert!(json.get("r_axis_angle").is_some());
        let back: Pose9D = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
        let bad = serde_json::json!({"t":[0,0,0],"r_axis_angle":[0,0,0],"s":[1,0,1]});
        assert!(serde_json::from_value::<Pose9D>(bad).is_err());
    }

    fn arb_vec(range: f64) -> impl Strategy<Value = Vec3> {
        (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn identity_pose_max_deviation(pts in prop::collection::vec(arb_vec(10.0), 1..20)) {
            let id = Pose9D::identity();
            for p in &pts {
                prop_assert!((id.transform_point(p) - p).norm() < 1e-12);
            }
        }

        #[test]
        fn rigid_composition(ta in arb_vec(2.0), ra in arb_vec(3.0), tb in arb_vec(2.0), rb in arb_vec(3.0),
                             p in arb_vec(1.0)) {
            let a = Pose9D::new(ta, ra, Vec3::repeat(1.0)).unwrap();
            let b = Pose9D::new(tb, rb, Vec3::repeat(1.0)).unwrap();
            let sequential = b.transform_point(&a.transform_point(&p));
            let composed = a.transformed_by(&b.to_isometry());
            prop_assert!((composed.transform_point(&p) - sequential).norm() < 1e-9);
        }

        #[test]
        fn params_round_trip(t in arb_vec(2.0), r in arb_vec(3.0), s in (0.1f64..3.0, 0.1f64..3.0, 0.1f64..3.0)) {
            let p = Pose9D::new(t, r, Vec3::new(s.0, s.1, s.2)).unwrap();
            let q = Pose9D::from_params(&p.to_params()).unwrap();
            prop_assert!((q.translation() - p.translation()).norm() < 1e-12);
            prop_assert!((q.rotation_matrix() - p.rotation_matrix()).norm() < 1e-12);
            prop_assert!((q.scale() - p.scale()).norm() < 1e-12);
        }
    }
}
