use serde::{Deserialize, Serialize};

use super::kdtree::KdTree;
use crate::error::Result;
use crate::geometry::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChamferDirection {
    AToB,
    BToA,
    Symmetric,
}

/// How nearest-neighbor distances are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// Mean of squared distances (square meters).
    #[default]
    Squared,
    /// Mean of Euclidean distances (meters).
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamferResult {
    pub value: f64,
    pub direction: ChamferDirection,
}

/// Chamfer distance with squared Euclidean point distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud, direction: ChamferDirection) -> Result<ChamferResult> {
    chamfer_with(a, b, direction, DistanceKind::Squared)
}

pub fn chamfer_with(
    a: &PointCloud,
    b: &PointCloud,
    direction: ChamferDirection,
    kind: DistanceKind,
) -> Result<ChamferResult> {
    a.require_non_empty()?;
    b.require_non_empty()?;
    let value = match direction {
        ChamferDirection::AToB => one_sided(a.points(), &KdTree::new(b.points()), kind),
        ChamferDirection::BToA => one_sided(b.points(), &KdTree::new(a.points()), kind),
        ChamferDirection::Symmetric => {
            one_sided(a.points(), &KdTree::new(b.points()), kind)
                + one_sided(b.points(), &KdTree::new(a.points()), kind)
        }
    };
    Ok(ChamferResult { value, direction })
}

/// Mean nearest-neighbor distance from `source` into a prebuilt index.
///
/// `source` must be non-empty and `target` must hold at least one point.
pub fn one_sided(source: &[Vec3], target: &KdTree, kind: DistanceKind) -> f64 {
    let mut sum = 0.0;
    for p in source {
        let (_, d) = target.nearest(p).expect("non-empty target");
        sum += match kind {
            DistanceKind::Squared => d,
            DistanceKind::Euclidean => d.sqrt(),
        };
    }
    sum / source.len() as f64
}

/// Symmetric squared chamfer between two prebuilt indices' point sets.
pub fn symmetric_indexed(a: &[Vec3], a_index: &KdTree, b: &[Vec3], b_index: &KdTree) -> f64 {
    one_sided(a, b_index, DistanceKind::Squared) + one_sided(b, a_index, DistanceKind::Squared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        pts.iter().map(|&p| Vec3::from(p)).collect()
    }

    #[test]
    fn identical_clouds_are_zero() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        for dir in [
            ChamferDirection::AToB,
            ChamferDirection::BToA,
            ChamferDirection::Symmetric,
        ] {
            assert_eq!(chamfer(&a, &a, dir).unwrap().value, 0.0);
        }
    }

    #[test]
    fn hand_computed_directions() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b, ChamferDirection::AToB).unwrap().value, 1.0);
        assert_eq!(chamfer(&a, &b, ChamferDirection::BToA).unwrap().value, 5.0);
        assert_eq!(chamfer(&a, &b, ChamferDirection::Symmetric).unwrap().value, 6.0);
        let euclid = chamfer_with(&a, &b, ChamferDirection::BToA, DistanceKind::Euclidean).unwrap();
        assert_eq!(euclid.value, 2.0);
    }

    #[test]
    fn empty_cloud_is_error() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(
            chamfer(&a, &PointCloud::default(), ChamferDirection::AToB),
            Err(Error::EmptyCloud)
        ));
    }

    fn arb_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..max)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn symmetric_is_symmetric(a in arb_cloud(60), b in arb_cloud(60)) {
            let ab = chamfer(&a, &b, ChamferDirection::Symmetric).unwrap().value;
            let ba = chamfer(&b, &a, ChamferDirection::Symmetric).unwrap().value;
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn adding_targets_never_increases(a in arb_cloud(40), b in arb_cloud(40), extra in arb_cloud(20)) {
            let before = chamfer(&a, &b, ChamferDirection::AToB).unwrap().value;
            let grown: PointCloud = b.points().iter().chain(extra.points()).copied().collect();
            let after = chamfer(&a, &grown, ChamferDirection::AToB).unwrap().value;
            prop_assert!(after <= before);
        }

        #[test]
        fn rigid_invariance(a in arb_cloud(40), b in arb_cloud(40), angle in 0.0f64..std::f64::consts::TAU,
                            t in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)) {
            let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), angle);
            let shift = Vec3::new(t.0, t.1, t.2);
            let (ma, mb) = (a.map(|p| rot * p + shift), b.map(|p| rot * p + shift));
            let before = chamfer(&a, &b, ChamferDirection::Symmetric).unwrap().value;
            let after = chamfer(&ma, &mb, ChamferDirection::Symmetric).unwrap().value;
            prop_assert!((before - after).abs() <= 1e-9 * before.max(1e-300) + 1e-15);
        }
    }
}
