//! Procedural test scenes: a ground plane with optional boxes, ramps and
//! stairs. Every primitive stands on `z = 0`.

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::mesh::SceneMesh;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSpec {
    /// Extent along x and y, meters.
    pub size: [f64; 2],
    #[serde(default)]
    pub center: [f64; 2],
    /// Grid cells per side; each cell is split into two triangles.
    #[serde(default = "one")]
    pub cells: usize,
}

fn one() -> usize {
    1
}

/// Axis-aligned (up to yaw) box resting on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 2],
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
}

/// Wedge rising from height 0 at `start` to `height` after `length` meters
/// along the yaw direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSpec {
    pub start: [f64; 2],
    pub length: f64,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub yaw_deg: f64,
}

/// Straight flight of steps climbing along the yaw direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StairsSpec {
    pub start: [f64; 2],
    pub steps: usize,
    pub rise: f64,
    pub run: f64,
    pub width: f64,
    #[serde(default)]
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub ground: GroundSpec,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    #[serde(default)]
    pub ramps: Vec<RampSpec>,
    #[serde(default)]
    pub stairs: Vec<StairsSpec>,
}

impl SceneSpec {
    /// Square flat ground of the given side length centered on the origin.
    pub fn flat(side: f64) -> Self {
        Self {
            ground: GroundSpec { size: [side, side], center: [0.0, 0.0], cells: 1 },
            boxes: vec![],
            ramps: vec![],
            stairs: vec![],
        }
    }
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::flat(50.0)
    }
}

#[derive(Default)]
struct Soup {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl Soup {
    fn quad(&mut self, a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, d: Vector3<f64>) {
        let base = self.vertices.len();
        self.vertices.extend([a, b, c, d]);
        self.faces.push([base, base + 1, base + 2]);
        self.faces.push([base, base + 2, base + 3]);
    }

    fn tri(&mut self, a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) {
        let base = self.vertices.len();
        self.vertices.extend([a, b, c]);
        self.faces.push([base, base + 1, base + 2]);
    }

    /// Open-bottom cuboid spanning local `[x0, x1] × [-w/2, w/2] × [0, h]`.
    fn cuboid(&mut self, frame: &Frame, x0: f64, x1: f64, w: f64, h: f64) {
        let y0 = -0.5 * w;
        let y1 = 0.5 * w;
        let p = |x, y, z| frame.point(x, y, z);
        self.quad(p(x0, y0, h), p(x1, y0, h), p(x1, y1, h), p(x0, y1, h));
        self.quad(p(x0, y0, 0.0), p(x1, y0, 0.0), p(x1, y0, h), p(x0, y0, h));
        self.quad(p(x1, y1, 0.0), p(x0, y1, 0.0), p(x0, y1, h), p(x1, y1, h));
        self.quad(p(x1, y0, 0.0), p(x1, y1, 0.0), p(x1, y1, h), p(x1, y0, h));
        self.quad(p(x0, y1, 0.0), p(x0, y0, 0.0), p(x0, y0, h), p(x0, y1, h));
    }
}

struct Frame {
    origin: Vector2<f64>,
    rot: Rotation3<f64>,
}

impl Frame {
    fn new(origin: [f64; 2], yaw_deg: f64) -> Self {
        Self { origin: Vector2::from(origin), rot: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw_deg.to_radians()) }
    }

    fn point(&self, x: f64, y: f64, z: f64) -> Vector3<f64> {
        let r = self.rot * Vector3::new(x, y, z);
        Vector3::new(r.x + self.origin.x, r.y + self.origin.y, r.z)
    }
}

fn positive(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(())
    } else {
        Err(Error::Degenerate(format!("{name} dimensions must be positive and finite, got {values:?}")))
    }
}

/// Build the triangle mesh described by `spec`. Output is deterministic.
pub fn make_test_scene(spec: &SceneSpec) -> Result<SceneMesh> {
    let mut soup = Soup::default();
    let g = &spec.ground;
    positive("ground", &g.size)?;
    if g.cells == 0 {
        return Err(Error::Degenerate("ground needs at least one cell".into()));
    }
    let n = g.cells;
    let x0 = g.center[0] - 0.5 * g.size[0];
    let y0 = g.center[1] - 0.5 * g.size[1];
    let dx = g.size[0] / n as f64;
    let dy = g.size[1] / n as f64;
    let base = soup.vertices.len();
    for j in 0..=n {
        for i in 0..=n {
            soup.vertices.push(Vector3::new(x0 + i as f64 * dx, y0 + j as f64 * dy, 0.0));
        }
    }
    for j in 0..n {
        for i in 0..n {
            let a = base + j * (n + 1) + i;
            let b = a + 1;
            let c = a + n + 2;
            let d = a + n + 1;
            soup.faces.push([a, b, c]);
            soup.faces.push([a, c, d]);
        }
    }

    for b in &spec.boxes {
        positive("box", &b.size)?;
        let frame = Frame::new(b.center, b.yaw_deg);
        soup.cuboid(&frame, -0.5 * b.size[0], 0.5 * b.size[0], b.size[1], b.size[2]);
    }

    for r in &spec.ramps {
        positive("ramp", &[r.length, r.width, r.height])?;
        let f = Frame::new(r.start, r.yaw_deg);
        let (l, w, h) = (r.length, 0.5 * r.width, r.height);
        let p = |x, y, z| f.point(x, y, z);
        soup.quad(p(0.0, -w, 0.0), p(l, -w, h), p(l, w, h), p(0.0, w, 0.0));
        soup.tri(p(0.0, -w, 0.0), p(l, -w, 0.0), p(l, -w, h));
        soup.tri(p(l, w, 0.0), p(0.0, w, 0.0), p(l, w, h));
        soup.quad(p(l, -w, 0.0), p(l, w, 0.0), p(l, w, h), p(l, -w, h));
    }

    for s in &spec.stairs {
        positive("stairs", &[s.rise, s.run, s.width])?;
        if s.steps == 0 {
            return Err(Error::Degenerate("stairs need at least one step".into()));
        }
        let f = Frame::new(s.start, s.yaw_deg);
        for k in 0..s.steps {
            let x = k as f64 * s.run;
            soup.cuboid(&f, x, x + s.run, s.width, (k + 1) as f64 * s.rise);
        }
    }

    SceneMesh::new(soup.vertices, soup.faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_ground_is_two_triangles() {
        let m = make_test_scene(&SceneSpec::flat(50.0)).unwrap();
        assert_eq!(m.faces().len(), 2);
        assert!(m.vertices().iter().all(|v| v.z == 0.0));
        let c = m.closest_point(&Vector3::new(3.0, -7.0, 2.0)).unwrap();
        assert_eq!(c.distance, 2.0);
    }

    #[test]
    fn tessellated_ground() {
        let mut spec = SceneSpec::flat(10.0);
        spec.ground.cells = 4;
        let m = make_test_scene(&spec).unwrap();
        assert_eq!(m.faces().len(), 32);
    }

    #[test]
    fn box_sits_on_ground() {
        let mut spec = SceneSpec::flat(20.0);
        spec.boxes.push(BoxSpec { center: [2.0, 1.0], size: [1.0, 2.0, 0.5], yaw_deg: 30.0 });
        let m = make_test_scene(&spec).unwrap();
        let box_verts = &m.vertices()[4..];
        let zmin = box_verts.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
        let zmax = box_verts.iter().map(|v| v.z).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(zmin, 0.0);
        assert_eq!(zmax, 0.5);
        let hit = m.ray_cast(&Vector3::new(2.0, 1.0, 3.0), &Vector3::new(0.0, 0.0, -1.0), 10.0).unwrap().unwrap();
        assert!((hit.point.z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stairs_top_height() {
        let mut spec = SceneSpec::flat(20.0);
        spec.stairs.push(StairsSpec { start: [1.0, 0.0], steps: 5, rise: 0.15, run: 0.3, width: 1.0, yaw_deg: 0.0 });
        let m = make_test_scene(&spec).unwrap();
        let top = m.vertices().iter().map(|v| v.z).fold(f64::NEG_INFINITY, f64::max);
        assert!((top - 5.0 * 0.15).abs() < 1e-12);
        let x_top = 1.0 + 4.5 * 0.3;
        let hit = m.ray_cast(&Vector3::new(x_top, 0.0, 2.0), &Vector3::new(0.0, 0.0, -1.0), 10.0).unwrap().unwrap();
        assert!((hit.point.z - 0.75).abs() < 1e-12);
    }

    #[test]
    fn ramp_slope() {
        let mut spec = SceneSpec::flat(20.0);
        spec.ramps.push(RampSpec { start: [0.0, 0.0], length: 2.0, width: 1.0, height: 0.5, yaw_deg: 0.0 });
        let m = make_test_scene(&spec).unwrap();
        let hit = m.ray_cast(&Vector3::new(1.0, 0.0, 2.0), &Vector3::new(0.0, 0.0, -1.0), 10.0).unwrap().unwrap();
        assert!((hit.point.z - 0.25).abs() < 1e-12);
    }

    #[test]
    fn deterministic() {
        let mut spec = SceneSpec::flat(20.0);
        spec.boxes.push(BoxSpec { center: [2.0, 1.0], size: [1.0, 2.0, 0.5], yaw_deg: 10.0 });
        let a = make_test_scene(&spec).unwrap();
        let b = make_test_scene(&spec).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert_eq!(a.faces(), b.faces());
    }

    #[test]
    fn degenerate_primitives_rejected() {
        let mut spec = SceneSpec::flat(20.0);
        spec.boxes.push(BoxSpec { center: [0.0, 0.0], size: [1.0, 0.0, 1.0], yaw_deg: 0.0 });
        assert!(matches!(make_test_scene(&spec), Err(Error::Degenerate(_))));
    }
}
