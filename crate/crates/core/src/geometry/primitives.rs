//! Procedural meshes used by the synthetic scene generator and tests.

use std::f64::consts::TAU;

use super::mesh::{TriMesh, Vec3};

/// Closed axis-aligned box.
pub fn cuboid(center: Vec3, half: Vec3) -> TriMesh {
    let vertices = (0..8)
        .map(|i| {
            center
                + Vec3::new(
                    if i & 1 == 0 { -half.x } else { half.x },
                    if i & 2 == 0 { -half.y } else { half.y },
                    if i & 4 == 0 { -half.z } else { half.z },
                )
        })
        .collect();
    let triangles = vec![
        [0, 2, 1],
        [1, 2, 3], // -z
        [4, 5, 6],
        [5, 7, 6], // +z
        [0, 1, 4],
        [1, 5, 4], // -y
        [2, 6, 3],
        [3, 6, 7], // +y
        [0, 4, 2],
        [2, 4, 6], // -x
        [1, 3, 5],
        [3, 7, 5], // +x
    ];
    TriMesh::new(vertices, triangles).expect("cuboid topology is valid")
}

/// Closed cylinder along the up axis.
pub fn cylinder(center: Vec3, radius: f64, height: f64, segments: usize) -> TriMesh {
    let segments = segments.max(3);
    let h = height * 0.5;
    let mut vertices = Vec::with_capacity(2 * segments + 2);
    for i in 0..segments {
        let a = TAU * i as f64 / segments as f64;
        let (s, c) = a.sin_cos();
        vertices.push(center + Vec3::new(radius * c, radius * s, -h));
        vertices.push(center + Vec3::new(radius * c, radius * s, h));
    }
    let bottom = vertices.len() as u32;
    vertices.push(center - Vec3::new(0.0, 0.0, h));
    let top = bottom + 1;
    vertices.push(center + Vec3::new(0.0, 0.0, h));

    let n = segments as u32;
    let mut triangles = Vec::with_capacity(4 * segments);
    for i in 0..n {
        let j = (i + 1) % n;
        let (b0, t0, b1, t1) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
        triangles.push([b0, b1, t0]);
        triangles.push([t0, b1, t1]);
        triangles.push([bottom, b1, b0]);
        triangles.push([top, t0, t1]);
    }
    TriMesh::new(vertices, triangles).expect("cylinder topology is valid")
}

/// Axis-aligned quad in the plane `z = z`, spanning `[x0, x1] × [y0, y1]`.
pub fn quad_z(x0: f64, x1: f64, y0: f64, y1: f64, z: f64) -> TriMesh {
    TriMesh::new(
        vec![
            Vec3::new(x0, y0, z),
            Vec3::new(x1, y0, z),
            Vec3::new(x1, y1, z),
            Vec3::new(x0, y1, z),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("quad topology is valid")
}

/// Union of several parts.
pub fn assemble(parts: &[TriMesh]) -> TriMesh {
    parts.iter().fold(TriMesh::empty(), |acc, p| acc.merge(p))
}
