//! Bounding volume hierarchy over triangles with exact nearest-point and
//! nearest-hit queries.
//!
//! Results are identical to an exhaustive scan: nodes are only pruned when
//! their (slightly inflated) bounds cannot contain a strictly better
//! candidate, and candidates are ordered by `(distance, face index)`.

use nalgebra::Vector3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: Vector3::repeat(f64::INFINITY), max: Vector3::repeat(f64::NEG_INFINITY) }
    }

    pub fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub(crate) fn inflated(&self) -> Aabb {
        let pad = Vector3::repeat(1e-9 * (1.0 + self.max.abs().max().max(self.min.abs().max())));
        Aabb { min: self.min - pad, max: self.max + pad }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    /// Squared distance from a point to the box (zero inside).
    pub fn distance_sq(&self, p: &Vector3<f64>) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < self.min[i] {
                self.min[i] - p[i]
            } else if p[i] > self.max[i] {
                p[i] - self.max[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    /// Entry parameter of a ray into the box, if it enters within `t_max`.
    pub fn ray_entry(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // NaN arises for zero direction components with the origin on a slab plane.
            if lo.is_nan() || hi.is_nan() {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Face indices in leaf order.
    order: Vec<usize>,
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    // Interior: orthogonal projection onto the supporting plane, which keeps
    // points already on an axis-aligned face exactly in place.
    let n = ab.cross(&ac);
    p - n * (n.dot(&ap) / n.norm_squared())
}

/// Möller–Trumbore ray/triangle intersection; returns the ray parameter.
pub fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-15 {
        return None;
    }
    let inv = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv;
    Some(t)
}

/// Lexicographic `(value, face)` comparison used for deterministic ties.
#[inline]
fn better(value: f64, face: usize, best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((bv, bf)) => value < bv || (value == bv && face < bf),
    }
}

impl Bvh {
    pub fn build(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Self {
        let mut order: Vec<usize> = (0..faces.len()).collect();
        let boxes: Vec<Aabb> = faces
            .iter()
            .map(|f| {
                let mut b = Aabb::empty();
                for &i in f {
                    b.grow(&vertices[i]);
                }
                b
            })
            .collect();
        let centers: Vec<Vector3<f64>> = boxes.iter().map(|b| b.center()).collect();
        let mut nodes = Vec::with_capacity(2 * faces.len() / LEAF_SIZE + 1);
        if !faces.is_empty() {
            Self::build_node(&mut nodes, &mut order, 0, faces.len(), &boxes, &centers);
        }
        Self { nodes, order }
    }

    fn build_node(
        nodes: &mut Vec<Node>,
        order: &mut [usize],
        start: usize,
        end: usize,
        boxes: &[Aabb],
        centers: &[Vector3<f64>],
    ) -> usize {
        let bounds = order[start..end].iter().fold(Aabb::empty(), |acc, &f| acc.merge(&boxes[f])).inflated();
        let idx = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { bounds, start, end });
            return idx;
        }
        let mut cb = Aabb::empty();
        for &f in &order[start..end] {
            cb.grow(&centers[f]);
        }
        let extent = cb.max - cb.min;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centers[a][axis].total_cmp(&centers[b][axis]).then(a.cmp(&b))
        });
        nodes.push(Node::Leaf { bounds, start, end });
        let left = Self::build_node(nodes, order, start, mid, boxes, centers);
        let right = Self::build_node(nodes, order, mid, end, boxes, centers);
        nodes[idx] = Node::Inner { bounds, left, right };
        idx
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.nodes.first().map(|n| *n.bounds())
    }

    /// Nearest point over all triangles: `(point, squared distance, face)`.
    pub fn closest_point(
        &self,
        vertices: &[Vector3<f64>],
        faces: &[[usize; 3]],
        q: &Vector3<f64>,
    ) -> Option<(Vector3<f64>, f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        let mut best_point = Vector3::zeros();
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if let Some((bd, _)) = best {
                if node.bounds().distance_sq(q) > bd {
                    continue;
                }
            }
            match node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[*start..*end] {
                        let [a, b, c] = faces[f].map(|i| vertices[i]);
                        let p = closest_point_on_triangle(q, &a, &b, &c);
                        let d = (q - p).norm_squared();
                        if better(d, f, best) {
                            best = Some((d, f));
                            best_point = p;
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_sq(q);
                    let dr = self.nodes[*right].bounds().distance_sq(q);
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best.map(|(d, f)| (best_point, d, f))
    }

    /// Nearest intersection with `t ∈ (0, max_range]`: `(t, face)`.
    pub fn ray_cast(
        &self,
        vertices: &[Vector3<f64>],
        faces: &[[usize; 3]],
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        max_range: f64,
    ) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let limit = best.map_or(max_range, |(t, _)| t);
            let Some(_) = node.bounds().ray_entry(origin, &inv, limit) else {
                continue;
            };
            match node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[*start..*end] {
                        let [a, b, c] = faces[f].map(|i| vertices[i]);
                        if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
                            if t > 0.0 && t <= max_range && better(t, f, best) {
                                best = Some((t, f));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best
    }
}
