//! Planar convex hull and minimum-area enclosing rectangle.

use std::f64::consts::FRAC_PI_2;

/// Andrew's monotone chain; counter-clockwise, no collinear points.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Orientation in `[0, π/2)` of the minimum-area rectangle enclosing `points`.
///
/// One side of the optimal rectangle is collinear with a hull edge, so every
/// edge direction is tried. Ties keep the earliest edge in hull order.
pub fn min_area_rect_angle(points: &[(f64, f64)]) -> f64 {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        if hull.len() == 2 {
            let (dx, dy) = (hull[1].0 - hull[0].0, hull[1].1 - hull[0].1);
            return dy.atan2(dx).rem_euclid(FRAC_PI_2);
        }
        return 0.0;
    }
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        let angle = (b.1 - a.1).atan2(b.0 - a.0).rem_euclid(FRAC_PI_2);
        let area = rect_area(&hull, angle);
        if area < best.0 * (1.0 - 1e-12) {
            best = (area, angle);
        }
    }
    best.1
}

/// Area of the bounding rectangle with sides along `angle` and `angle + π/2`.
pub fn rect_area(points: &[(f64, f64)], angle: f64) -> f64 {
    let (s, c) = angle.sin_cos();
    let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        let u = c * x + s * y;
        let v = -s * x + c * y;
        lo_u = lo_u.min(u);
        hi_u = hi_u.max(u);
        lo_v = lo_v.min(v);
        hi_v = hi_v.max(v);
    }
    (hi_u - lo_u) * (hi_v - lo_v)
}
