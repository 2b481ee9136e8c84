use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mesh::{TriMesh, Vec3};
use crate::error::{Error, Result};

/// Unordered set of 3D points in meters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct PointCloud {
    points: Vec<Vec3>,
}

impl From<Vec<[f64; 3]>> for PointCloud {
    fn from(raw: Vec<[f64; 3]>) -> Self {
        Self::new(raw.into_iter().map(Vec3::from).collect())
    }
}

impl From<PointCloud> for Vec<[f64; 3]> {
    fn from(cloud: PointCloud) -> Self {
        cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

impl FromIterator<Vec3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Vec3>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> PointCloud {
        self.points.iter().map(f).collect()
    }

    /// Evenly strided subset of at most `max` points, order preserved.
    pub fn subsample(&self, max: usize) -> PointCloud {
        if self.points.len() <= max || max == 0 {
            return self.clone();
        }
        let n = self.points.len();
        (0..max).map(|i| self.points[i * n / max]).collect()
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }
}

/// Area-weighted uniform sampling of the mesh surface.
///
/// Each sample picks a triangle with probability proportional to its area and
/// a barycentric-uniform point inside it. Identical `(mesh, n, seed)` inputs
/// produce identical clouds.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles().len());
    let mut total = 0.0;
    for i in 0..mesh.triangles().len() {
        total += mesh.triangle_area(i);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateSurface);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let tri = cumulative.partition_point(|&c| c <= target).min(cumulative.len() - 1);
            let [a, b, c] = mesh.triangle(tri);
            let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            a + (b - a) * u + (c - a) * v
        })
        .collect();
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> TriMesh {
        // Areas 1.5 and 0.5.
        TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(3.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(10.0, 0.0, 0.0),
                Vec3::new(11.0, 0.0, 0.0),
                Vec3::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_samples_stay_in_plane() {
        let mesh = TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(1.0, 0.0, 1.0),
                Vec3::new(0.0, 1.0, 1.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let cloud = sample_surface(&mesh, 1000, 3).unwrap();
        assert_eq!(cloud.len(), 1000);
        for p in cloud.points() {
            assert!((p.z - 1.0).abs() < 1e-9);
            assert!(p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn area_ratio_is_respected() {
        let cloud = sample_surface(&two_triangles(), 100_000, 11).unwrap();
        let big = cloud.points().iter().filter(|p| p.x < 5.0).count() as f64;
        let small = cloud.len() as f64 - big;
        let ratio = big / small;
        assert!((ratio / 3.0 - 1.0).abs() < 0.03, "ratio {ratio}");
    }

    #[test]
    fn output_size_matches_request() {
        assert_eq!(sample_surface(&two_triangles(), 2048, 0).unwrap().len(), 2048);
    }

    #[test]
    fn zero_area_is_degenerate() {
        let flat = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(sample_surface(&flat, 10, 0), Err(Error::DegenerateSurface)));
        assert!(matches!(
            sample_surface(&TriMesh::empty(), 10, 0),
            Err(Error::DegenerateSurface)
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let m = two_triangles();
        assert_eq!(sample_surface(&m, 64, 5).unwrap(), sample_surface(&m, 64, 5).unwrap());
        assert_ne!(sample_surface(&m, 64, 5).unwrap(), sample_surface(&m, 64, 6).unwrap());
    }

    #[test]
    fn subsample_strides() {
        let cloud: PointCloud = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let sub = cloud.subsample(5);
        let xs: Vec<f64> = sub.points().iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(cloud.subsample(20).len(), 10);
    }
}
