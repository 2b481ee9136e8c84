use serde::{Deserialize, Serialize};

use super::camera::{CameraView, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};

/// Geometry closer than this to the camera plane is clipped.
pub const NEAR_PLANE: f64 = 1e-3;

/// Row-major grid of z-depths in meters; 0 marks background or invalid pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidCamera(format!(
                "depth buffer holds {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        if data.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidCamera("depth values must be finite and >= 0".into()));
        }
        Ok(DepthMap { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, depth: f64) {
        self.data[v * self.width + u] = depth;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn union(a: Option<PixelRect>, b: Option<PixelRect>) -> Option<PixelRect> {
        match (a, b) {
            (Some(a), Some(b)) => Some(PixelRect {
                x0: a.x0.min(b.x0),
                y0: a.y0.min(b.y0),
                x1: a.x1.max(b.x1),
                y1: a.y1.max(b.y1),
            }),
            (a, None) => a,
            (None, b) => b,
        }
    }

    fn include(r: &mut Option<PixelRect>, u: usize, v: usize) {
        match r {
            Some(rect) => {
                rect.x0 = rect.x0.min(u);
                rect.y0 = rect.y0.min(v);
                rect.x1 = rect.x1.max(u + 1);
                rect.y1 = rect.y1.max(v + 1);
            }
            None => {
                *r = Some(PixelRect {
                    x0: u,
                    y0: v,
                    x1: u + 1,
                    y1: v + 1,
                })
            }
        }
    }
}

/// Depth and silhouette of a rendered or observed object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOutput {
    depth: DepthMap,
    silhouette: Vec<bool>,
    bounds: Option<PixelRect>,
}

impl RenderOutput {
    /// Wraps a depth map; the silhouette is exactly its valid pixels.
    pub fn from_depth(depth: DepthMap) -> Self {
        let mut bounds = None;
        let silhouette: Vec<bool> = depth.data.iter().map(|&d| d > 0.0).collect();
        for v in 0..depth.height {
            for u in 0..depth.width {
                if silhouette[v * depth.width + u] {
                    PixelRect::include(&mut bounds, u, v);
                }
            }
        }
        RenderOutput {
            depth,
            silhouette,
            bounds,
        }
    }

    pub fn depth(&self) -> &DepthMap {
        &self.depth
    }

    pub fn silhouette(&self) -> &[bool] {
        &self.silhouette
    }

    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    /// Bounding rectangle of the silhouette, `None` when empty.
    pub fn bounds(&self) -> Option<PixelRect> {
        self.bounds
    }

    pub fn silhouette_area(&self) -> usize {
        self.silhouette.iter().filter(|&&s| s).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_none()
    }

    pub fn into_depth(self) -> DepthMap {
        self.depth
    }
}

/// Z-buffer rasterization of `mesh` into the view.
///
/// Depth is the z-coordinate of the ray/triangle-plane intersection at each
/// covered pixel center, so planar geometry renders without interpolation
/// error. Both windings are drawn; geometry behind the near plane is clipped.
pub fn rasterize(mesh: &TriMesh, view: &CameraView) -> RenderOutput {
    let k = view.intrinsics;
    let mut depth = DepthMap::zeros(k.width, k.height);
    let mut bounds = None;
    let cam: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|v| view.extrinsics.transform_point(&(*v).into()).coords)
        .collect();

    let mut clipped: Vec<[Vec3; 3]> = Vec::with_capacity(2);
    for t in mesh.triangles() {
        let tri = [cam[t[0] as usize], cam[t[1] as usize], cam[t[2] as usize]];
        clip_near(&tri, &mut clipped);
        for piece in &clipped {
            draw_triangle(piece, &k, &mut depth, &mut bounds);
        }
    }

    let silhouette = depth.data.iter().map(|&d| d > 0.0).collect();
    RenderOutput {
        depth,
        silhouette,
        bounds,
    }
}

fn clip_near(tri: &[Vec3; 3], out: &mut Vec<[Vec3; 3]>) {
    out.clear();
    let inside = tri.map(|v| v.z >= NEAR_PLANE);
    match inside.iter().filter(|&&b| b).count() {
        3 => out.push(*tri),
        0 => {}
        _ => {
            let mut poly: Vec<Vec3> = Vec::with_capacity(4);
            for i in 0..3 {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                let (ia, ib) = (inside[i], inside[(i + 1) % 3]);
                if ia {
                    poly.push(a);
                }
                if ia != ib {
                    let s = (NEAR_PLANE - a.z) / (b.z - a.z);
                    let mut p = a + (b - a) * s;
                    p.z = NEAR_PLANE;
                    poly.push(p);
                }
            }
            for i in 1..poly.len() - 1 {
                out.push([poly[0], poly[i], poly[i + 1]]);
            }
        }
    }
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

fn draw_triangle(tri: &[Vec3; 3], k: &Intrinsics, depth: &mut DepthMap, bounds: &mut Option<PixelRect>) {
    let normal = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let plane = normal.dot(&tri[0]);
    if plane == 0.0 {
        // Plane through the camera center: seen edge-on.
        return;
    }
    let proj = tri.map(|v| (k.fx * v.x / v.z + k.cx, k.fy * v.y / v.z + k.cy));
    let area = edge(proj[0].0, proj[0].1, proj[1].0, proj[1].1, proj[2].0, proj[2].1);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    let min_u = proj.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_u = proj.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).floor();
    let min_v = proj.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_v = proj.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).floor();
    if max_u < 0.0 || max_v < 0.0 || min_u >= k.width as f64 || min_v >= k.height as f64 {
        return;
    }
    let max_u = max_u.min(k.width as f64 - 1.0) as usize;
    let max_v = max_v.min(k.height as f64 - 1.0) as usize;
    let sign = area.signum();
    for v in min_v as usize..=max_v {
        let py = v as f64;
        let ry = (py - k.cy) / k.fy;
        for u in min_u as usize..=max_u {
            let px = u as f64;
            let w0 = edge(proj[1].0, proj[1].1, proj[2].0, proj[2].1, px, py) * sign;
            let w1 = edge(proj[2].0, proj[2].1, proj[0].0, proj[0].1, px, py) * sign;
            let w2 = edge(proj[0].0, proj[0].1, proj[1].0, proj[1].1, px, py) * sign;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let rx = (px - k.cx) / k.fx;
            let denom = normal.x * rx + normal.y * ry + normal.z;
            let z = plane / denom;
            if !(z >= NEAR_PLANE) || !z.is_finite() {
                continue;
            }
            let slot = &mut depth.data[v * k.width + u];
            if *slot == 0.0 || z < *slot {
                *slot = z;
                PixelRect::include(bounds, u, v);
            }
        }
    }
}

/// Target-side renders for an object: masked sensor depth when present,
/// otherwise the object's partial mesh rasterized into the view.
pub fn render_target_views(views: &[CameraView], partial_mesh: Option<&TriMesh>) -> Result<Vec<RenderOutput>> {
    let renders: Vec<RenderOutput> = views
        .iter()
        .map(|view| match (&view.depth, partial_mesh) {
            (Some(depth), _) => Ok(RenderOutput::from_depth(depth.clone())),
            (None, Some(mesh)) => Ok(rasterize(mesh, view)),
            (None, None) => Err(Error::MissingDepth),
        })
        .collect::<Result<_>>()?;
    if renders.iter().all(RenderOutput::is_empty) {
        return Err(Error::NoObservations);
    }
    Ok(renders)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{cuboid, quad_z};
    use crate::render::backproject;
    use nalgebra::Isometry3;

    fn canonical_view(w: usize, h: usize) -> CameraView {
        CameraView::new(Intrinsics::with_fov(w, h, 1.2), Isometry3::identity()).unwrap()
    }

    fn assert_consistent(r: &RenderOutput) {
        for (d, s) in r.depth().data().iter().zip(r.silhouette()) {
            assert_eq!(*d > 0.0, *s);
        }
    }

    #[test]
    fn planar_quad_depth_is_exact() {
        let view = canonical_view(64, 48);
        let r = rasterize(&quad_z(-0.5, 0.5, -0.5, 0.5, 2.0), &view);
        assert!(r.silhouette_area() > 0);
        for &d in r.depth().data() {
            assert!(d == 0.0 || d == 2.0, "{d}");
        }
        assert_consistent(&r);
    }

    #[test]
    fn empty_mesh_renders_nothing() {
        let r = rasterize(&TriMesh::empty(), &canonical_view(16, 12));
        assert_eq!(r.silhouette_area(), 0);
        assert!(r.depth().data().iter().all(|&d| d == 0.0));
        assert!(r.is_empty());
    }

    #[test]
    fn nearer_surface_wins() {
        let view = canonical_view(64, 48);
        let near = quad_z(-0.1, 0.1, -0.1, 0.1, 1.0);
        let far = quad_z(-0.5, 0.5, -0.5, 0.5, 2.0);
        for mesh in [near.merge(&far), far.merge(&near)] {
            let r = rasterize(&mesh, &view);
            let center = r.depth().get(32, 24);
            assert_eq!(center, 1.0);
            let both = r.depth().data().iter().filter(|&&d| d == 1.0).count();
            assert!(both > 0 && r.depth().data().contains(&2.0));
        }
    }

    #[test]
    fn behind_camera_is_clipped() {
        let view = canonical_view(32, 24);
        let r = rasterize(&quad_z(-0.5, 0.5, -0.5, 0.5, -2.0), &view);
        assert!(r.is_empty());
        // Straddling the camera plane: only the visible part draws, all depths positive.
        let straddle = cuboid(Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.3, 0.3, 1.0));
        let r = rasterize(&straddle, &view);
        assert!(r.depth().data().iter().all(|&d| d == 0.0 || d >= NEAR_PLANE));
        assert_consistent(&r);
    }

    #[test]
    fn depth_shift_along_optical_axis() {
        let view = canonical_view(96, 72);
        let cube = cuboid(Vec3::new(0.1, -0.05, 3.0), Vec3::new(0.4, 0.3, 0.2));
        let shifted = cube.map_vertices(|v| v + Vec3::new(0.0, 0.0, 0.25));
        let a = rasterize(&cube, &view);
        let b = rasterize(&shifted, &view);
        // Compare at pixels covered in both renders by the same front face.
        let mut compared = 0;
        for i in 0..a.depth().data().len() {
            let (da, db) = (a.depth().data()[i], b.depth().data()[i]);
            if da > 0.0 && db > 0.0 && (da - 2.8).abs() < 1e-9 {
                assert!((db - da - 0.25).abs() < 1e-6);
                compared += 1;
            }
        }
        assert!(compared > 50);
    }

    #[test]
    fn resolution_consistent_area() {
        let cube = cuboid(Vec3::new(0.2, 0.1, 3.0), Vec3::new(0.5, 0.4, 0.3));
        let lo = rasterize(&cube, &canonical_view(96, 72)).silhouette_area() as f64;
        let hi = rasterize(&cube, &canonical_view(192, 144)).silhouette_area() as f64;
        assert!((hi / (4.0 * lo) - 1.0).abs() < 0.05, "{lo} {hi}");
    }

    #[test]
    fn backprojection_lands_on_surface() {
        let cube = cuboid(Vec3::new(0.1, 0.2, 2.5), Vec3::new(0.4, 0.3, 0.5));
        let view = CameraView::look_at(
            Intrinsics::with_fov(96, 72, 1.1),
            Vec3::new(1.5, -1.0, 0.5),
            Vec3::new(0.1, 0.2, 2.5),
            Vec3::new(0.0, -1.0, 0.0),
        )
        .unwrap();
        let r = rasterize(&cube, &view);
        let with_depth = view.clone().with_depth(r.into_depth()).unwrap();
        let cloud = backproject(&with_depth).unwrap();
        assert!(cloud.len() > 100);
        for p in cloud.points() {
            assert!(cube.distance_to(p) < 1e-6);
        }
    }

    #[test]
    fn target_views_require_observation() {
        let view = canonical_view(32, 24).with_depth(DepthMap::zeros(32, 24)).unwrap();
        assert!(matches!(
            render_target_views(std::slice::from_ref(&view), None),
            Err(Error::NoObservations)
        ));
        let mesh = quad_z(-0.5, 0.5, -0.5, 0.5, 2.0);
        let bare = canonical_view(32, 24);
        let out = render_target_views(&[view, bare], Some(&mesh)).unwrap();
        assert!(out[0].is_empty());
        assert!(!out[1].is_empty());
    }
}
