//! Triangle scene geometry with exact closest-point and ray queries.

mod builder;
pub(crate) mod bvh;
mod mesh;

use std::path::Path;

pub use builder::{make_test_scene, BoxSpec, GroundSpec, RampSpec, SceneSpec, StairsSpec};
pub use bvh::{closest_point_on_triangle, ray_triangle, Aabb};
pub use mesh::{ClosestPoint, RayHit, SceneMesh, MIN_FACE_AREA};

use crate::error::Result;
use crate::io::ply;

impl SceneMesh {
    /// Load a PLY or OBJ triangle mesh.
    pub fn load(path: &Path) -> Result<Self> {
        let (v, f) = ply::read_mesh(path)?;
        Self::new(v, f)
    }

    /// Save as PLY or OBJ depending on the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        ply::write_mesh(path, self.vertices(), self.faces())
    }
}
