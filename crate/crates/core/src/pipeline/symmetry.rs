use std::f64::consts::FRAC_PI_4;

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, yaw_rotation, TriMesh};
use crate::metrics::{one_sided, DistanceKind, KdTree};

use super::annotation::Symmetry;

pub const SYMMETRY_SAMPLES: usize = 5000;
pub const SYMMETRY_THRESHOLD: f64 = 0.05;

/// FNV-1a over the vertex and index bit patterns.
pub fn mesh_fingerprint(mesh: &TriMesh) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for v in mesh.vertices() {
        for c in v.iter() {
            feed(&c.to_bits().to_le_bytes());
        }
    }
    for t in mesh.triangles() {
        for i in t {
            feed(&i.to_le_bytes());
        }
    }
    h
}

/// Centers the mesh on its bounding box and scales the box diagonal to 1.
pub fn normalize_diagonal(mesh: &TriMesh) -> Result<TriMesh> {
    let (lo, hi) = mesh.bounds().ok_or_else(|| Error::InvalidMesh("empty mesh".into()))?;
    let diag = (hi - lo).norm();
    if !(diag > 0.0) {
        return Err(Error::DegenerateGeometry("mesh has zero extent".into()));
    }
    let center = (lo + hi) * 0.5;
    Ok(mesh.map_vertices(|v| (v - center) / diag))
}

/// Unsquared symmetric chamfer between the normalized mesh and its copy turned
/// by `k · 45°` about the up axis. Index `k - 1` of the result holds turn `k`.
pub fn rotation_chamfers(mesh: &TriMesh) -> Result<[f64; 7]> {
    let base = normalize_diagonal(mesh)?;
    let fp = mesh_fingerprint(&base);
    let seed = |k: u64| fp ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let original = sample_surface(&base, SYMMETRY_SAMPLES, seed(0))?.into_points();
    let original_index = KdTree::new(&original);
    let mut out = [0.0; 7];
    for (k, slot) in (1u64..=7).zip(out.iter_mut()) {
        let rot = yaw_rotation(k as f64 * FRAC_PI_4);
        let turned = base.map_vertices(|v| rot * v);
        let samples = sample_surface(&turned, SYMMETRY_SAMPLES, seed(k))?.into_points();
        let index = KdTree::new(&samples);
        *slot = one_sided(&original, &index, DistanceKind::Euclidean)
            + one_sided(&samples, &original_index, DistanceKind::Euclidean);
    }
    Ok(out)
}

/// Groups turns that reproduce the shape into none / two-fold / four-fold / infinite.
pub fn symmetry_from_chamfers(chamfers: &[f64; 7], threshold: f64) -> Symmetry {
    let matches = |k: usize| chamfers[k - 1] < threshold;
    if (1..=7).all(matches) {
        Symmetry::Infinite
    } else if [2, 4, 6].into_iter().all(matches) {
        Symmetry::FourFold
    } else if matches(4) {
        Symmetry::TwoFold
    } else {
        Symmetry::None
    }
}

pub fn classify_symmetry(mesh: &TriMesh) -> Result<Symmetry> {
    Ok(symmetry_from_chamfers(&rotation_chamfers(mesh)?, SYMMETRY_THRESHOLD))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{assemble, cuboid, cylinder};
    use crate::geometry::Vec3;

    #[test]
    fn box_shapes() {
        let square = cuboid(Vec3::zeros(), Vec3::new(0.5, 0.5, 0.3));
        assert_eq!(classify_symmetry(&square).unwrap(), Symmetry::FourFold);
        let rect = cuboid(Vec3::zeros(), Vec3::new(0.6, 0.3, 0.3));
        assert_eq!(classify_symmetry(&rect).unwrap(), Symmetry::TwoFold);
    }

    #[test]
    fn cylinder_and_bracket() {
        assert_eq!(
            classify_symmetry(&cylinder(Vec3::zeros(), 0.4, 1.0, 64)).unwrap(),
            Symmetry::Infinite
        );
        let bracket = assemble(&[
            cuboid(Vec3::new(0.0, 0.0, 0.05), Vec3::new(0.5, 0.1, 0.05)),
            cuboid(Vec3::new(-0.45, 0.0, 0.4), Vec3::new(0.05, 0.1, 0.3)),
        ]);
        assert_eq!(classify_symmetry(&bracket).unwrap(), Symmetry::None);
    }

    #[test]
    fn invariant_to_uniform_scale() {
        let rect = cuboid(Vec3::new(1.0, 2.0, 0.0), Vec3::new(0.6, 0.3, 0.3));
        let big = rect.map_vertices(|v| v * 7.5);
        assert_eq!(classify_symmetry(&rect).unwrap(), classify_symmetry(&big).unwrap());
    }

    #[test]
    fn group_rules() {
        let mut c = [1.0; 7];
        assert_eq!(symmetry_from_chamfers(&c, 0.05), Symmetry::None);
        c[3] = 0.0;
        assert_eq!(symmetry_from_chamfers(&c, 0.05), Symmetry::TwoFold);
        c[1] = 0.0;
        c[5] = 0.0;
        assert_eq!(symmetry_from_chamfers(&c, 0.05), Symmetry::FourFold);
        let c = [0.0; 7];
        assert_eq!(symmetry_from_chamfers(&c, 0.05), Symmetry::Infinite);
    }

    #[test]
    fn degenerate_mesh_is_error() {
        assert!(classify_symmetry(&TriMesh::empty()).is_err());
    }
}
