//! Procedural humanoid mesh.
//!
//! Every joint owns one elliptical capsule running from the joint to its
//! child (or to an end point for leaf joints). The first cylinder ring of
//! each capsule is centered exactly on the joint, which makes the joint
//! regressor a uniform average over that ring. Skin weights come from the
//! distance to the owning bone and its kinematic neighbours with a Gaussian
//! falloff. Vertices on the feet are clamped to `z >= 0` so the soles are
//! flat and rest on the ground plane.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::params::SHAPE_DIM;
use super::tree::*;
use crate::error::{Error, Result};

/// Mesh resolution of the generated template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateOptions {
    /// Vertices per ring.
    pub radial_segments: usize,
    /// Rings along each cylinder, including both ends.
    pub axial_rings: usize,
    /// Rings on each end cap (excluding the pole).
    pub cap_rings: usize,
    /// Skin weight falloff length, meters.
    pub weight_falloff: f64,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        Self { radial_segments: 12, axial_rings: 4, cap_rings: 2, weight_falloff: 0.025 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyTemplate {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Dense V×24 skin weights; rows sum to one.
    pub skin_weights: Vec<[f64; JOINT_COUNT]>,
    /// For each joint, the (vertex, weight) pairs whose weighted sum gives
    /// the rest joint position.
    pub joint_regressor: Vec<Vec<(usize, f64)>>,
    /// Per-vertex linear shape displacement basis, one vector per β entry.
    pub beta_basis: Vec<[Vector3<f64>; SHAPE_DIM]>,
    /// Sole vertices of the left and right foot.
    pub foot_vertex_sets: [Vec<usize>; 2],
}

/// Shape of one body part: cross-section semi-axes along `u` and `w`, and
/// the axial length of the end caps.
struct Part {
    end: Vector3<f64>,
    radius_u: f64,
    radius_w: f64,
    cap: f64,
    /// Preferred direction of the `u` semi-axis.
    u_hint: Vector3<f64>,
}

fn part_for(joint: usize, rest: &[Vector3<f64>]) -> Part {
    let x = Vector3::<f64>::x();
    let y = Vector3::<f64>::y();
    let side = |j: usize| if rest[j].y >= 0.0 { 1.0 } else { -1.0 };
    // (end point, radius along u, radius along w, cap length, u hint)
    let (end, ru, rw, cap, hint) = match joint {
        PELVIS => (rest[SPINE1], 0.11, 0.16, 0.08, x),
        LEFT_HIP | RIGHT_HIP => (rest[joint + 3], 0.075, 0.075, 0.06, x),
        SPINE1 => (rest[SPINE2], 0.10, 0.15, 0.06, x),
        LEFT_KNEE | RIGHT_KNEE => (rest[joint + 3], 0.055, 0.055, 0.045, x),
        SPINE2 => (rest[SPINE3], 0.11, 0.16, 0.06, x),
        LEFT_ANKLE | RIGHT_ANKLE => (rest[joint + 3], 0.045, 0.042, 0.045, y),
        SPINE3 => (rest[NECK], 0.12, 0.18, 0.07, x),
        LEFT_FOOT | RIGHT_FOOT => (rest[joint] + Vector3::new(0.08, 0.0, 0.0), 0.045, 0.032, 0.03, y),
        NECK => (rest[HEAD], 0.05, 0.05, 0.04, x),
        LEFT_COLLAR | RIGHT_COLLAR => (rest[joint + 3], 0.05, 0.05, 0.04, x),
        HEAD => (rest[HEAD] + Vector3::new(0.0, 0.0, 0.12), 0.095, 0.08, 0.07, x),
        LEFT_SHOULDER | RIGHT_SHOULDER => (rest[joint + 2], 0.05, 0.05, 0.04, x),
        LEFT_ELBOW | RIGHT_ELBOW => (rest[joint + 2], 0.04, 0.04, 0.035, x),
        LEFT_WRIST | RIGHT_WRIST => (rest[joint + 2], 0.045, 0.022, 0.02, x),
        LEFT_HAND | RIGHT_HAND => (rest[joint] + Vector3::new(0.0, 0.08 * side(joint), 0.0), 0.04, 0.018, 0.02, x),
        _ => unreachable!("joint index out of range"),
    };
    Part { end, radius_u: ru, radius_w: rw, cap, u_hint: hint }
}

fn is_foot_part(j: usize) -> bool {
    matches!(j, LEFT_ANKLE | RIGHT_ANKLE | LEFT_FOOT | RIGHT_FOOT)
}

/// Distance from `p` to the segment `[a, b]` and the closest point on it.
fn segment_closest(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    let c = a + ab * t;
    ((p - c).norm(), c)
}

struct Builder {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    owner: Vec<usize>,
    rings: Vec<Vec<usize>>,
}

impl Builder {
    fn add_part(&mut self, joint: usize, start: Vector3<f64>, part: &Part, opts: &TemplateOptions) {
        let s = opts.radial_segments;
        let axis = part.end - start;
        let len = axis.norm();
        let d = axis / len;
        let u = (part.u_hint - d * part.u_hint.dot(&d)).normalize();
        let w = d.cross(&u);
        let ring_at = |center: Vector3<f64>, scale: f64| -> Vec<Vector3<f64>> {
            (0..s)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / s as f64;
                    center + u * (part.radius_u * scale * a.cos()) + w * (part.radius_w * scale * a.sin())
                })
                .collect()
        };

        // Ring centers and scales from the start pole to the end pole.
        let mut layout: Vec<(Vector3<f64>, f64)> = Vec::new();
        let c = opts.cap_rings;
        for i in (1..=c).rev() {
            let phi = i as f64 / (c + 1) as f64 * std::f64::consts::FRAC_PI_2;
            layout.push((start - d * (part.cap * phi.sin()), phi.cos()));
        }
        let cylinder_first = layout.len();
        for i in 0..opts.axial_rings {
            let t = i as f64 / (opts.axial_rings - 1) as f64;
            layout.push((start + axis * t, 1.0));
        }
        for i in 1..=c {
            let phi = i as f64 / (c + 1) as f64 * std::f64::consts::FRAC_PI_2;
            layout.push((part.end + d * (part.cap * phi.sin()), phi.cos()));
        }

        let base = self.vertices.len();
        let start_pole = base;
        self.vertices.push(start - d * part.cap);
        let mut ring_ids = Vec::with_capacity(layout.len());
        for (center, scale) in &layout {
            let first = self.vertices.len();
            self.vertices.extend(ring_at(*center, *scale));
            ring_ids.push((first..first + s).collect::<Vec<_>>());
        }
        let end_pole = self.vertices.len();
        self.vertices.push(part.end + d * part.cap);
        self.owner.resize(self.vertices.len(), joint);

        for k in 0..s {
            let k1 = (k + 1) % s;
            let first = &ring_ids[0];
            self.faces.push([start_pole, first[k1], first[k]]);
            let last = &ring_ids[ring_ids.len() - 1];
            self.faces.push([end_pole, last[k], last[k1]]);
        }
        for r in 0..ring_ids.len() - 1 {
            let (a, b) = (&ring_ids[r], &ring_ids[r + 1]);
            for k in 0..s {
                let k1 = (k + 1) % s;
                self.faces.push([a[k], a[k1], b[k1]]);
                self.faces.push([a[k], b[k1], b[k]]);
            }
        }
        self.rings[joint] = ring_ids[cylinder_first].clone();
    }
}

impl BodyTemplate {
    /// Build the humanoid template for the SMPL-style tree.
    pub fn procedural(opts: &TemplateOptions) -> Result<Self> {
        if opts.radial_segments < 4 || opts.radial_segments % 2 != 0 || opts.axial_rings < 2 || !(opts.weight_falloff > 0.0) {
            return Err(Error::InvalidInput("template resolution too low".into()));
        }
        let tree = KinematicTree::smpl();
        let rest = tree.rest_joints();
        let mut b = Builder { vertices: Vec::new(), faces: Vec::new(), owner: Vec::new(), rings: vec![Vec::new(); JOINT_COUNT] };
        let parts: Vec<Part> = (0..JOINT_COUNT).map(|j| part_for(j, &rest)).collect();
        for j in 0..JOINT_COUNT {
            b.add_part(j, rest[j], &parts[j], opts);
        }

        // Flatten the soles onto the ground plane.
        let mut clamped = vec![false; b.vertices.len()];
        for ((v, owner), c) in b.vertices.iter_mut().zip(&b.owner).zip(clamped.iter_mut()) {
            if is_foot_part(*owner) && v.z < 0.0 {
                v.z = 0.0;
                *c = true;
            }
        }

        let skin_weights = skin_weights(&b.vertices, &b.owner, &rest, &parts, &tree, opts.weight_falloff);
        let joint_regressor = b.rings.iter().map(|ring| ring_regressor(ring, &clamped)).collect();
        let beta_basis = shape_basis(&b.vertices, &b.owner, &rest, &parts);
        let foot_vertex_sets = [foot_set(&b.vertices, &skin_weights, [LEFT_ANKLE, LEFT_FOOT]), foot_set(&b.vertices, &skin_weights, [RIGHT_ANKLE, RIGHT_FOOT])];

        let template = Self { vertices: b.vertices, faces: b.faces, skin_weights, joint_regressor, beta_basis, foot_vertex_sets };
        template.validate()?;
        Ok(template)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Rest vertices displaced by the shape basis.
    pub fn shaped_vertices(&self, beta: &[f64]) -> Vec<Vector3<f64>> {
        self.vertices
            .iter()
            .zip(&self.beta_basis)
            .map(|(v, basis)| {
                let mut out = *v;
                for (b, dir) in beta.iter().zip(basis.iter()) {
                    out += dir * *b;
                }
                out
            })
            .collect()
    }

    /// Joint regressor applied to a vertex array.
    pub fn regress_joints(&self, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        self.joint_regressor
            .iter()
            .map(|row| row.iter().fold(Vector3::zeros(), |acc, &(v, w)| acc + vertices[v] * w))
            .collect()
    }

    /// Skin weights as (joint, weight) lists without zero entries.
    pub fn sparse_weights(&self) -> Vec<Vec<(usize, f64)>> {
        self.skin_weights
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(j, w)| (j, *w)).collect())
            .collect()
    }

    /// Joint with the largest weight for each vertex.
    pub fn dominant_joint(&self, vertex: usize) -> usize {
        let row = &self.skin_weights[vertex];
        (0..JOINT_COUNT).fold(0, |best, j| if row[j] > row[best] { j } else { best })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n == 0 || self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        if self.skin_weights.len() != n || self.beta_basis.len() != n {
            return Err(Error::Dimension("template per-vertex arrays disagree in length".into()));
        }
        for f in &self.faces {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidInput("face index out of range".into()));
            }
        }
        for (row, w) in self.skin_weights.iter().enumerate() {
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || w.iter().any(|x| *x < 0.0) {
                return Err(Error::SkinWeights { row, sum });
            }
        }
        if self.joint_regressor.len() != JOINT_COUNT {
            return Err(Error::Dimension("joint regressor must have 24 rows".into()));
        }
        if self.joint_regressor.iter().flatten().any(|(v, _)| *v >= n) {
            return Err(Error::InvalidInput("joint regressor references missing vertex".into()));
        }
        let [l, r] = &self.foot_vertex_sets;
        if l.is_empty() || r.is_empty() || l.iter().any(|v| r.contains(v)) {
            return Err(Error::InvalidInput("foot vertex sets must be non-empty and disjoint".into()));
        }
        if l.iter().chain(r.iter()).any(|&v| v >= n) {
            return Err(Error::InvalidInput("foot vertex index out of range".into()));
        }
        Ok(())
    }
}

/// Average of the diametrically opposite ring vertex pairs that were not
/// moved by sole flattening; their midpoints coincide with the ring center.
fn ring_regressor(ring: &[usize], clamped: &[bool]) -> Vec<(usize, f64)> {
    let half = ring.len() / 2;
    let ids: Vec<usize> = (0..half)
        .filter(|&k| !clamped[ring[k]] && !clamped[ring[k + half]])
        .flat_map(|k| [ring[k], ring[k + half]])
        .collect();
    let w = 1.0 / ids.len() as f64;
    ids.into_iter().map(|v| (v, w)).collect()
}

fn skin_weights(
    vertices: &[Vector3<f64>],
    owner: &[usize],
    rest: &[Vector3<f64>],
    parts: &[Part],
    tree: &KinematicTree,
    falloff: f64,
) -> Vec<[f64; JOINT_COUNT]> {
    vertices
        .iter()
        .zip(owner)
        .map(|(v, &own)| {
            let mut candidates: Vec<usize> = vec![own];
            candidates.extend(tree.parent(own));
            candidates.extend(tree.children(own));
            let dists: Vec<(usize, f64)> =
                candidates.iter().map(|&j| (j, segment_closest(v, &rest[j], &parts[j].end).0)).collect();
            let d_own = dists[0].1;
            let mut raw: Vec<(usize, f64)> = dists
                .iter()
                .map(|&(j, d)| {
                    let excess = (d - d_own).max(0.0) / falloff;
                    (j, (-0.5 * excess * excess).exp())
                })
                .filter(|(_, w)| *w > 1e-2)
                .collect();
            raw.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            raw.truncate(4);
            let total: f64 = raw.iter().map(|(_, w)| w).sum();
            let mut row = [0.0; JOINT_COUNT];
            for (j, w) in raw {
                row[j] += w / total;
            }
            // Absorb rounding so rows sum to one.
            let sum: f64 = row.iter().sum();
            row[own] += 1.0 - sum;
            row
        })
        .collect()
}

fn shape_basis(
    vertices: &[Vector3<f64>],
    owner: &[usize],
    rest: &[Vector3<f64>],
    parts: &[Part],
) -> Vec<[Vector3<f64>; SHAPE_DIM]> {
    const TORSO: [usize; 4] = [PELVIS, SPINE1, SPINE2, SPINE3];
    const LEGS: [usize; 8] = [LEFT_HIP, RIGHT_HIP, LEFT_KNEE, RIGHT_KNEE, LEFT_ANKLE, RIGHT_ANKLE, LEFT_FOOT, RIGHT_FOOT];
    const ARMS: [usize; 8] =
        [LEFT_SHOULDER, RIGHT_SHOULDER, LEFT_ELBOW, RIGHT_ELBOW, LEFT_WRIST, RIGHT_WRIST, LEFT_HAND, RIGHT_HAND];
    vertices
        .iter()
        .zip(owner)
        .map(|(v, &own)| {
            let (_, axis_pt) = segment_closest(v, &rest[own], &parts[own].end);
            let radial = v - axis_pt;
            let side = v.y.signum();
            let mut b = [Vector3::zeros(); SHAPE_DIM];
            b[0] = Vector3::new(0.0, 0.0, 0.05 * v.z);
            b[1] = radial * 0.1;
            if TORSO.contains(&own) {
                b[2] = radial * 0.15;
            }
            b[3] = Vector3::new(0.0, 0.0, 0.04 * v.z.min(0.9) / 0.9);
            if ARMS.contains(&own) && v.y.abs() > 0.18 {
                b[4] = Vector3::new(0.0, 0.05 * (v.y.abs() - 0.18) * side, 0.0);
            }
            if v.y.abs() > 0.06 && v.z > 1.3 {
                b[5] = Vector3::new(0.0, 0.02 * side, 0.0);
            }
            if TORSO.contains(&own) && v.x > 0.0 {
                b[6] = Vector3::new(0.03 * v.x / 0.12, 0.0, 0.0);
            }
            if own == HEAD {
                b[7] = (v - rest[HEAD]) * 0.1;
            }
            if v.z < 1.0 && (LEGS.contains(&own) || own == PELVIS) {
                b[8] = Vector3::new(0.0, 0.02 * side, 0.0);
            }
            if is_foot_part(own) {
                b[9] = Vector3::new(0.2 * v.x.max(0.0), 0.0, 0.0);
            }
            b
        })
        .collect()
}

/// Lowest 5% (by rest height) of the vertices dominated by the given foot bones.
fn foot_set(vertices: &[Vector3<f64>], weights: &[[f64; JOINT_COUNT]], bones: [usize; 2]) -> Vec<usize> {
    let mut region: Vec<usize> = (0..vertices.len())
        .filter(|&i| {
            let row = &weights[i];
            let dom = (0..JOINT_COUNT).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            bones.contains(&dom)
        })
        .collect();
    region.sort_by(|&a, &b| vertices[a].z.total_cmp(&vertices[b].z).then(a.cmp(&b)));
    let count = ((region.len() as f64) * 0.05).ceil().max(1.0) as usize;
    let mut set: Vec<usize> = region.into_iter().take(count).collect();
    set.sort_unstable();
    set
}
