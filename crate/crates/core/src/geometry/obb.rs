use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::cloud::PointCloud;
use super::hull2d::min_area_rect_angle;
use super::mesh::Vec3;
use crate::error::Result;

/// Oriented box: columns of `axes` are the box directions, `extents` the half-sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObbResult {
    pub center: Vec3,
    pub axes: Matrix3<f64>,
    pub extents: Vec3,
}

impl ObbResult {
    pub fn volume(&self) -> f64 {
        8.0 * self.extents.x * self.extents.y * self.extents.z
    }

    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        let local = self.axes.transpose() * (p - self.center);
        (0..3).all(|i| local[i].abs() <= self.extents[i] + margin)
    }
}

/// PCA-aligned bounding box.
///
/// Axes are covariance eigenvectors in descending eigenvalue order, flipped to
/// a right-handed frame. Within a degenerate eigenspace the axes come from
/// the minimum-area enclosing rectangle instead. The center is the midpoint
/// of the projected ranges.
pub fn oriented_bbox(points: &PointCloud) -> Result<ObbResult> {
    points.require_non_empty()?;
    let n = points.len() as f64;
    let mean = points.centroid().expect("non-empty");
    let mut cov = Matrix3::zeros();
    for p in points.points() {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda = order.map(|i| eig.eigenvalues[i]);
    let vecs = order.map(|i| eig.eigenvectors.column(i).into_owned());
    let tol = 1e-9 * lambda[0].abs().max(f64::MIN_POSITIVE);

    // PCA cannot orient a box inside a degenerate eigenspace (e.g. a cube);
    // fall back to the minimum-area rectangle within that subspace.
    let axes = if lambda[0] - lambda[2] <= tol {
        min_volume_frame(points, &vecs)
    } else if lambda[0] - lambda[1] <= tol {
        sorted_by_extent(points, planar_frame(points, &vecs[2]))
    } else if lambda[1] - lambda[2] <= tol {
        let frame = planar_frame(points, &vecs[0]);
        let (a, b) = (frame.column(0).into_owned(), frame.column(1).into_owned());
        let (ea, eb) = (spread(points, &a), spread(points, &b));
        if ea >= eb {
            Matrix3::from_columns(&[vecs[0], a, b])
        } else {
            Matrix3::from_columns(&[vecs[0], b, a])
        }
    } else {
        Matrix3::from_columns(&vecs)
    };
    Ok(box_from_axes(points, right_handed(axes)))
}

fn right_handed(mut axes: Matrix3<f64>) -> Matrix3<f64> {
    if axes.determinant() < 0.0 {
        axes.set_column(2, &(-axes.column(2)));
    }
    axes
}

fn spread(points: &PointCloud, axis: &Vec3) -> f64 {
    let (lo, hi) = points
        .points()
        .iter()
        .map(|p| p.dot(axis))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    hi - lo
}

fn sorted_by_extent(points: &PointCloud, axes: Matrix3<f64>) -> Matrix3<f64> {
    let mut cols: Vec<Vec3> = (0..3).map(|i| axes.column(i).into_owned()).collect();
    cols.sort_by(|a, b| spread(points, b).total_cmp(&spread(points, a)));
    Matrix3::from_columns(&cols)
}

/// Frame `(u, v, normal)` whose in-plane axes bound the projection with minimum area.
fn planar_frame(points: &PointCloud, normal: &Vec3) -> Matrix3<f64> {
    let n = normal.normalize();
    let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = n.cross(&seed).normalize();
    let b = n.cross(&a);
    let flat: Vec<(f64, f64)> = points.points().iter().map(|p| (p.dot(&a), p.dot(&b))).collect();
    let theta = min_area_rect_angle(&flat);
    let (s, c) = theta.sin_cos();
    Matrix3::from_columns(&[a * c + b * s, b * c - a * s, n])
}

/// Fully isotropic covariance: try normals along point-pair directions.
fn min_volume_frame(points: &PointCloud, pca: &[Vec3; 3]) -> Matrix3<f64> {
    let head = &points.points()[..points.len().min(48)];
    let mut normals: Vec<Vec3> = pca.to_vec();
    for (i, p) in head.iter().enumerate() {
        for q in &head[i + 1..] {
            let d = q - p;
            if d.norm() > 0.0 {
                normals.push(d.normalize());
            }
        }
    }
    let mut best = (f64::INFINITY, Matrix3::from_columns(pca));
    for n in &normals {
        let frame = planar_frame(points, n);
        let volume: f64 = (0..3).map(|i| spread(points, &frame.column(i).into_owned())).product();
        if volume < best.0 * (1.0 - 1e-12) {
            best = (volume, frame);
        }
    }
    sorted_by_extent(points, best.1)
}

/// Tight box around `points` for fixed orthonormal `axes`.
pub fn box_from_axes(points: &PointCloud, axes: Matrix3<f64>) -> ObbResult {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points.points() {
        let local = axes.transpose() * p;
        lo = lo.inf(&local);
        hi = hi.sup(&local);
    }
    let mid = (lo + hi) * 0.5;
    ObbResult {
        center: axes * mid,
        axes,
        extents: (hi - lo) * 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn cube_corners() -> PointCloud {
        (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect()
    }

    fn sorted(v: Vec3) -> [f64; 3] {
        let mut a = [v.x, v.y, v.z];
        a.sort_by(f64::total_cmp);
        a
    }

    #[test]
    fn unit_cube() {
        let obb = oriented_bbox(&cube_corners()).unwrap();
        assert!((obb.center - Vec3::repeat(0.5)).norm() < 1e-9);
        for e in sorted(obb.extents) {
            assert!((e - 0.5).abs() < 1e-9);
        }
        assert!((obb.axes.determinant() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotated_box_axes_follow_rotation() {
        // Elongated box so the principal axis is well defined.
        let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), 30f64.to_radians());
        let pts: PointCloud = (0..8)
            .map(|i| {
                let v = Vec3::new(
                    if i & 1 == 0 { -1.0 } else { 1.0 },
                    if i & 2 == 0 { -0.5 } else { 0.5 },
                    if i & 4 == 0 { -0.25 } else { 0.25 },
                );
                rot * v
            })
            .collect();
        let obb = oriented_bbox(&pts).unwrap();
        let principal = obb.axes.column(0);
        let expected = rot * Vec3::x();
        assert!(principal.dot(&expected).abs() > 1.0 - 1e-9);
        assert!((obb.extents - Vec3::new(1.0, 0.5, 0.25)).norm() < 1e-9);
    }

    #[test]
    fn rotated_cube_extents_invariant() {
        let rot = Rotation3::from_axis_angle(&Vec3::z_axis(), 30f64.to_radians());
        let pts = cube_corners().map(|p| rot * p);
        let obb = oriented_bbox(&pts).unwrap();
        for e in sorted(obb.extents) {
            assert!((e - 0.5).abs() < 1e-9, "{e}");
        }
        for expected in [rot * Vec3::x(), rot * Vec3::y(), Vec3::z()] {
            let best = (0..3)
                .map(|i| obb.axes.column(i).dot(&expected).abs())
                .fold(0.0, f64::max);
            assert!(best > 1.0 - 1e-9);
        }
    }

    #[test]
    fn single_point() {
        let p = Vec3::new(1.0, -2.0, 3.0);
        let obb = oriented_bbox(&PointCloud::new(vec![p])).unwrap();
        assert!((obb.center - p).norm() < 1e-12);
        assert_eq!(obb.extents, Vec3::zeros());
    }

    #[test]
    fn empty_is_error() {
        assert!(oriented_bbox(&PointCloud::default()).is_err());
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(
            (-2.0f64..2.0, -1.0f64..1.0, -0.5f64..0.5).prop_map(|(x, y, z)| Vec3::new(x, y, z)),
            4..60,
        )
    }

    proptest! {
        #[test]
        fn contains_all_points_and_orthonormal(pts in arb_cloud()) {
            let cloud = PointCloud::new(pts);
            let obb = oriented_bbox(&cloud).unwrap();
            prop_assert!((obb.axes.determinant() - 1.0).abs() < 1e-6);
            prop_assert!((obb.axes.transpose() * obb.axes - Matrix3::identity()).norm() < 1e-6);
            for p in cloud.points() {
                prop_assert!(obb.contains(p, 1e-6));
            }
        }

        #[test]
        fn volume_rigid_invariant(pts in arb_cloud(), axis in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
                                  angle in 0.0f64..6.0, t in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0)) {
            let cloud = PointCloud::new(pts);
            let rot = Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(Vec3::new(axis.0, axis.1, axis.2)), angle);
            let shift = Vec3::new(t.0, t.1, t.2);
            let moved = cloud.map(|p| rot * p + shift);
            let v0 = oriented_bbox(&cloud).unwrap().volume();
            let v1 = oriented_bbox(&moved).unwrap().volume();
            prop_assert!((v0 - v1).abs() <= 1e-6 * v0.max(1e-12), "{} vs {}", v0, v1);
        }
    }
}
