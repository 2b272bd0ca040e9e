//! Viewpoint-aware surface sampling: keep the faces a LiDAR could see and
//! sample them at the density its angular resolution produces.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::SceneMesh;
use crate::sim::{LidarModel, SensorPose};

/// A sample point expressed on the mesh so it can follow the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSample {
    pub face: usize,
    pub bary: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VisibleSample {
    pub kept_faces: Vec<usize>,
    pub samples: Vec<SurfaceSample>,
    pub points: Vec<Vector3<f64>>,
}

impl VisibleSample {
    /// Nothing on the mesh is visible from the viewpoint.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityOptions {
    /// Drop faces outside the sensor's vertical field of view or range.
    pub fov_cull: bool,
    /// Give every kept face a centroid sample when no beam lands on it.
    pub face_fallback: bool,
}

impl Default for VisibilityOptions {
    fn default() -> Self {
        Self { fov_cull: true, face_fallback: true }
    }
}

pub(crate) fn sample_point(verts: &[Vector3<f64>], faces: &[[usize; 3]], s: &SurfaceSample) -> Vector3<f64> {
    let f = faces[s.face];
    verts[f[0]] * s.bary[0] + verts[f[1]] * s.bary[1] + verts[f[2]] * s.bary[2]
}

fn barycentric(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> [f64; 3] {
    let (v0, v1, v2) = (b - a, c - a, p - a);
    let (d00, d01, d11) = (v0.dot(&v0), v0.dot(&v1), v1.dot(&v1));
    let (d20, d21) = (v2.dot(&v0), v2.dot(&v1));
    let den = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / den;
    let w = (d00 * d21 - d01 * d20) / den;
    [1.0 - v - w, v, w]
}

/// Faces visible from the sensor and samples at the sensor's resolution.
///
/// A face is kept when it faces the sensor and the ray from the sensor to
/// its centroid reaches it before any other body face. Samples are the
/// points where the sensor's beams first strike kept faces, so their density
/// follows the angular resolution at each face's range. With
/// `face_fallback`, a kept face struck by no beam contributes its centroid.
pub fn visible_sample(
    verts: &[Vector3<f64>],
    faces: &[[usize; 3]],
    sensor: &SensorPose,
    lidar: &LidarModel,
    opts: VisibilityOptions,
) -> Result<VisibleSample> {
    if verts.is_empty() || faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if let Some(bad) = faces.iter().flatten().find(|&&i| i >= verts.len()) {
        return Err(Error::InvalidInput(format!("face index {bad} out of range")));
    }
    lidar.validate()?;
    let mesh = SceneMesh::new_unchecked(verts.to_vec(), faces.to_vec());
    let r = sensor.rotation_matrix();
    let r_inv = r.transpose();
    let eye = sensor.origin;
    let mut out = VisibleSample::default();
    let mut kept = vec![false; faces.len()];
    for (fi, f) in faces.iter().enumerate() {
        let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
        let n = (b - a).cross(&(c - a));
        let centroid = (a + b + c) / 3.0;
        let to_eye = eye - centroid;
        let dist = to_eye.norm();
        if !(n.dot(&to_eye) > 0.0) || dist == 0.0 {
            continue;
        }
        let dir = -to_eye / dist;
        if opts.fov_cull && (dist > lidar.max_range || !lidar.in_fov(&(r_inv * dir))) {
            continue;
        }
        match mesh.ray_cast_unit(&eye, &dir, dist * (1.0 + 1e-9)) {
            Some(hit) if hit.face != fi && hit.distance < dist * (1.0 - 1e-9) => continue,
            _ => {}
        }
        kept[fi] = true;
        out.kept_faces.push(fi);
    }
    if out.kept_faces.is_empty() {
        return Ok(out);
    }

    let mut struck = vec![false; faces.len()];
    if let Some(bounds) = mesh.bounds() {
        let bounds = bounds.inflated();
        for ch in 0..lidar.channels {
            for &bin in &crate::sim::azimuth_bins_towards(lidar, &r, &eye, &bounds) {
                let dir = r * lidar.beam(ch, bin);
                let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
                if bounds.ray_entry(&eye, &inv, lidar.max_range).is_none() {
                    continue;
                }
                let Some(hit) = mesh.ray_cast_unit(&eye, &dir, lidar.max_range) else { continue };
                if !kept[hit.face] {
                    continue;
                }
                let f = faces[hit.face];
                let sample = SurfaceSample { face: hit.face, bary: barycentric(&hit.point, &verts[f[0]], &verts[f[1]], &verts[f[2]]) };
                struck[hit.face] = true;
                out.points.push(sample_point(verts, faces, &sample));
                out.samples.push(sample);
            }
        }
    }
    for &fi in &out.kept_faces {
        if opts.face_fallback && !struck[fi] {
            let sample = SurfaceSample { face: fi, bary: [1.0 / 3.0; 3] };
            out.points.push(sample_point(verts, faces, &sample));
            out.samples.push(sample);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    pub(crate) fn icosphere(center: Vector3<f64>, radius: f64, subdiv: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut v: Vec<Vector3<f64>> = [
            [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
            [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
            [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
        ]
        .iter()
        .map(|p| Vector3::from(*p).normalize())
        .collect();
        let mut f: Vec<[usize; 3]> = vec![
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ];
        for _ in 0..subdiv {
            let mut cache = std::collections::HashMap::new();
            let mut mid = |a: usize, b: usize, v: &mut Vec<Vector3<f64>>| {
                *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    v.push(((v[a] + v[b]) * 0.5).normalize());
                    v.len() - 1
                })
            };
            let mut nf = Vec::new();
            for [a, b, c] in f {
                let ab = mid(a, b, &mut v);
                let bc = mid(b, c, &mut v);
                let ca = mid(c, a, &mut v);
                nf.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            }
            f = nf;
        }
        (v.into_iter().map(|p| center + p * radius).collect(), f)
    }

    fn level(origin: Vector3<f64>) -> SensorPose {
        SensorPose::new(origin, &Matrix3::identity())
    }

    #[test]
    fn convex_mesh_keeps_exactly_the_front_faces() {
        let (v, f) = icosphere(Vector3::new(4.0, 0.0, 0.0), 0.5, 2);
        let eye = Vector3::zeros();
        let lidar = LidarModel::default();
        let s = visible_sample(&v, &f, &level(eye), &lidar, VisibilityOptions { fov_cull: false, ..Default::default() }).unwrap();
        let front: Vec<usize> = f
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let n = (v[t[1]] - v[t[0]]).cross(&(v[t[2]] - v[t[0]]));
                n.dot(&(eye - (v[t[0]] + v[t[1]] + v[t[2]]) / 3.0)) > 0.0
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(s.kept_faces, front);
        assert!(s.points.len() >= s.kept_faces.len());
    }

    #[test]
    fn viewpoint_inside_mesh_sees_nothing() {
        let (v, f) = icosphere(Vector3::zeros(), 1.0, 1);
        let s = visible_sample(&v, &f, &level(Vector3::zeros()), &LidarModel::default(), VisibilityOptions { fov_cull: false, ..Default::default() }).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn occluded_sphere_gets_no_samples() {
        let (mut v, mut f) = icosphere(Vector3::new(3.0, 0.0, 0.0), 0.5, 2);
        let (v2, f2) = icosphere(Vector3::new(5.0, 0.0, 0.0), 0.3, 2);
        let (off, hidden) = (v.len(), f.len());
        v.extend(v2);
        f.extend(f2.iter().map(|t| t.map(|i| i + off)));
        let s = visible_sample(&v, &f, &level(Vector3::zeros()), &LidarModel::default(), VisibilityOptions { fov_cull: false, ..Default::default() }).unwrap();
        let mesh = SceneMesh::new_unchecked(v.clone(), f.clone());
        for (p, smp) in s.points.iter().zip(&s.samples) {
            assert!(smp.face < hidden, "sample on the hidden sphere");
            let d = p.norm();
            let hit = mesh.ray_cast(&Vector3::zeros(), &(p / d), d * (1.0 + 1e-9)).unwrap().unwrap();
            assert!(hit.distance > d - 1e-6);
        }
    }

    #[test]
    fn density_tracks_resolution() {
        let (v, f) = icosphere(Vector3::new(3.0, 0.0, 0.0), 0.5, 3);
        let lidar = LidarModel::default();
        let s = visible_sample(&v, &f, &level(Vector3::zeros()), &lidar, VisibilityOptions::default()).unwrap();
        let half = (0.5f64 / 3.0).asin();
        let rays = 2.0 * std::f64::consts::PI * (1.0 - half.cos()) / (lidar.azimuth_step() * lidar.elevation_step());
        let got = s.points.len() as f64;
        assert!(got > 0.6 * rays && got < 1.6 * rays, "{got} samples vs {rays} rays");
    }
}
