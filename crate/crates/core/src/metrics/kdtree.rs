use crate::geometry::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static 3D kd-tree for exact nearest-neighbor queries.
///
/// Queries return the same minimum distance value as a linear scan using
/// [`squared_distance`], bit for bit.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    original: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
pub fn squared_distance(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn weighted_distance(a: &Vec3, b: &Vec3, w: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    w.x * dx * dx + w.y * dy * dy + w.z * dz * dz
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(points, &mut order, 0, points.len(), &mut nodes);
        }
        KdTree {
            points: order.iter().map(|&i| points[i]).collect(),
            original: order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest point as `(original index, squared distance)`; `None` when empty.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        self.search(query, &Vec3::repeat(1.0), false)
    }

    /// Nearest point under `Σ w_i (q_i − p_i)²` with non-negative axis weights.
    pub fn nearest_weighted(&self, query: &Vec3, weights: &Vec3) -> Option<(usize, f64)> {
        self.search(query, weights, true)
    }

    fn search(&self, query: &Vec3, weights: &Vec3, weighted: bool) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        let mut stack: Vec<usize> = Vec::with_capacity(32);
        stack.push(0);
        // Pending far-side subtrees carry their lower bound so stale entries are skipped.
        let mut bounds: Vec<f64> = Vec::with_capacity(32);
        bounds.push(0.0);
        while let (Some(node), Some(bound)) = (stack.pop(), bounds.pop()) {
            if bound > best.1 {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for i in start..end {
                        let d = if weighted {
                            weighted_distance(query, &self.points[i], weights)
                        } else {
                            squared_distance(query, &self.points[i])
                        };
                        if d < best.1 {
                            best = (i, d);
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = query[axis] - value;
                    let plane = weights[axis] * diff * diff;
                    let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                    stack.push(far);
                    bounds.push(plane);
                    stack.push(near);
                    bounds.push(0.0);
                }
            }
        }
        Some((self.original[best.0], best.1))
    }
}

fn build(points: &[Vec3], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    let slice = &mut order[start..end];
    if slice.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let spread = hi - lo;
    let axis = spread.imax();
    if spread[axis] == 0.0 {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];
    // Everything left of `mid` is <= value, everything from `mid` on is >= value.
    nodes.push(Node::Leaf { start, end });
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}
