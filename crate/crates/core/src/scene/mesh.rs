use nalgebra::Vector3;

use super::bvh::{Aabb, Bvh};
use crate::error::{Error, Result};

/// Minimum triangle area accepted in a scene, m².
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vector3<f64>,
    pub distance: f64,
    pub face: usize,
}

/// Result of a ray query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub point: Vector3<f64>,
    pub distance: f64,
    pub face: usize,
}

/// Immutable triangle mesh with a spatial index.
#[derive(Debug, Clone)]
pub struct SceneMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    index: Bvh,
}

/// Meshes are equal when their geometry is; the index is derived data.
impl PartialEq for SceneMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.faces == other.faces
    }
}

pub(crate) fn check_unit(dir: &Vector3<f64>) -> Result<()> {
    let n = dir.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitDirection(n));
    }
    Ok(())
}

impl SceneMesh {
    /// Build a mesh, rejecting out-of-range indices and degenerate triangles.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidInput(format!("face {i} references a missing vertex")));
            }
            let [a, b, c] = f.map(|v| vertices[v]);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            if !(area > MIN_FACE_AREA) {
                return Err(Error::Degenerate(format!("face {i} has area {area:e}")));
            }
        }
        let index = Bvh::build(&vertices, &faces);
        Ok(Self { vertices, faces, index })
    }

    /// Build without the degeneracy check (used for posed body meshes, whose
    /// faces may collapse in extreme poses).
    pub fn new_unchecked(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Self {
        let index = Bvh::build(&vertices, &faces);
        Self { vertices, faces, index }
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.index.bounds()
    }

    pub fn face_vertices(&self, face: usize) -> [Vector3<f64>; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }

    /// Globally nearest surface point; ties resolve to the lowest face index.
    pub fn closest_point(&self, q: &Vector3<f64>) -> Result<ClosestPoint> {
        let (point, d2, face) = self.index.closest_point(&self.vertices, &self.faces, q).ok_or(Error::EmptyMesh)?;
        Ok(ClosestPoint { point, distance: d2.sqrt(), face })
    }

    /// Nearest intersection along a unit ray with distance in `(0, max_range]`.
    pub fn ray_cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Result<Option<RayHit>> {
        check_unit(dir)?;
        Ok(self.ray_cast_unit(origin, dir, max_range))
    }

    pub(crate) fn ray_cast_unit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, max_range: f64) -> Option<RayHit> {
        self.index
            .ray_cast(&self.vertices, &self.faces, origin, dir, max_range)
            .map(|(t, face)| RayHit { point: origin + dir * t, distance: t, face })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::bvh::{closest_point_on_triangle, ray_triangle};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_plane() -> SceneMesh {
        SceneMesh::new(
            vec![
                Vector3::new(-1.0, -1.0, 0.0),
                Vector3::new(1.0, -1.0, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                Vector3::new(-1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    pub(crate) fn random_soup(rng: &mut ChaCha8Rng, n: usize) -> SceneMesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        while faces.len() < n {
            let c = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0));
            let tri: Vec<Vector3<f64>> = (0..3)
                .map(|_| c + Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)))
                .collect();
            if 0.5 * (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() < 1e-4 {
                continue;
            }
            let base = vertices.len();
            vertices.extend(tri);
            faces.push([base, base + 1, base + 2]);
        }
        SceneMesh::new(vertices, faces).unwrap()
    }

    fn brute_closest(m: &SceneMesh, q: &Vector3<f64>) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for f in 0..m.faces().len() {
            let [a, b, c] = m.face_vertices(f);
            let d = (q - closest_point_on_triangle(q, &a, &b, &c)).norm_squared();
            if d < best.0 {
                best = (d, f);
            }
        }
        best
    }

    fn brute_ray(m: &SceneMesh, o: &Vector3<f64>, d: &Vector3<f64>, range: f64) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for f in 0..m.faces().len() {
            let [a, b, c] = m.face_vertices(f);
            if let Some(t) = ray_triangle(o, d, &a, &b, &c) {
                if t > 0.0 && t <= range && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, f));
                }
            }
        }
        best
    }

    #[test]
    fn point_on_surface_has_zero_distance() {
        let m = unit_plane();
        let c = m.closest_point(&Vector3::new(0.3, -0.2, 0.0)).unwrap();
        assert_eq!(c.distance, 0.0);
    }

    #[test]
    fn point_above_plane() {
        let m = unit_plane();
        let c = m.closest_point(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(c.distance, 1.0);
        assert_eq!(c.point, Vector3::zeros());
        // (0,0) lies on the shared diagonal; the lower face index wins.
        assert_eq!(c.face, 0);
    }

    #[test]
    fn ray_hits_plane() {
        let m = unit_plane();
        let hit = m.ray_cast(&Vector3::new(0.0, 0.0, 1.0), &Vector3::new(0.0, 0.0, -1.0), 10.0).unwrap().unwrap();
        assert_eq!(hit.distance, 1.0);
        assert_eq!(hit.point, Vector3::zeros());
        assert!(m.ray_cast(&Vector3::new(0.0, 0.0, 1.0), &Vector3::new(0.0, 0.0, 1.0), 10.0).unwrap().is_none());
        assert!(m.ray_cast(&Vector3::new(0.0, 0.0, 1.0), &Vector3::new(0.0, 0.0, -1.0), 0.5).unwrap().is_none());
    }

    #[test]
    fn non_unit_direction_rejected() {
        let m = unit_plane();
        let err = m.ray_cast(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 2.0), 1.0).unwrap_err();
        assert!(matches!(err, Error::NonUnitDirection(_)));
    }

    #[test]
    fn empty_mesh_rejected() {
        let m = SceneMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(m.closest_point(&Vector3::zeros()), Err(Error::EmptyMesh)));
    }

    #[test]
    fn degenerate_face_rejected() {
        let v = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)];
        assert!(matches!(SceneMesh::new(v, vec![[0, 1, 2]]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn index_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_soup(&mut rng, 300);
        for _ in 0..2000 {
            let q = Vector3::new(rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0), rng.random_range(-4.0..4.0));
            let c = m.closest_point(&q).unwrap();
            let (d2, f) = brute_closest(&m, &q);
            assert_eq!(c.face, f);
            assert_eq!(c.distance, d2.sqrt());

            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let hit = m.ray_cast(&q, &dir, 20.0).unwrap().map(|h| (h.distance, h.face));
            assert_eq!(hit, brute_ray(&m, &q, &dir, 20.0));
        }
    }

    proptest! {
        #[test]
        fn distance_is_one_lipschitz(
            x1 in -6.0..6.0f64, y1 in -6.0..6.0f64, z1 in -3.0..3.0f64,
            x2 in -6.0..6.0f64, y2 in -6.0..6.0f64, z2 in -3.0..3.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let m = random_soup(&mut rng, 50);
            let a = Vector3::new(x1, y1, z1);
            let b = Vector3::new(x2, y2, z2);
            let da = m.closest_point(&a).unwrap().distance;
            let db = m.closest_point(&b).unwrap().distance;
            prop_assert!((da - db).abs() <= (a - b).norm() + 1e-12);
        }
    }
}
