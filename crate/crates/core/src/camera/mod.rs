//! Pinhole camera model, box overlap, extrinsic refinement from 2D
//! observations and perspective-n-point.

mod objective;
mod pnp;

pub use objective::{
    frames_from_motion, loss_cam, loss_cam_with_grad, optimize_extrinsics, CameraFrame, CameraOptConfig,
    ExtrinsicResult,
};
pub use pnp::{solve_pnp, PnpResult};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::rotation::{canonicalize, rodrigues};
use crate::error::{Error, Result};

/// Depth below which a point counts as behind the camera, meters.
pub const MIN_DEPTH: f64 = 1e-6;

/// Pinhole intrinsics (OpenCV convention: x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite();
        if !ok || !self.cx.is_finite() || !self.cy.is_finite() || self.width == 0 || self.height == 0 {
            return Err(Error::Degenerate(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Map a camera-frame point to pixels; `None` when not in front.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        (p.z > MIN_DEPTH).then(|| Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width as f64 && px.y <= self.height as f64
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self { fx: 600.0, fy: 600.0, cx: 960.0, cy: 540.0, width: 1920, height: 1080 }
    }
}

/// World-to-camera rigid transform `x_c = R(rotation) x_w + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsic {
    /// Axis-angle, radians.
    pub rotation: Vector3<f64>,
    /// Meters.
    pub translation: Vector3<f64>,
}

impl Extrinsic {
    pub fn identity() -> Self {
        Self { rotation: Vector3::zeros(), translation: Vector3::zeros() }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rodrigues(&self.rotation)
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    /// Camera at `eye` looking at `target`, image y pointing along −`up`.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<Self> {
        let z = target - eye;
        if z.norm() < 1e-12 {
            return Err(Error::Degenerate("look_at target coincides with eye".into()));
        }
        let z = z.normalize();
        let x = z.cross(up);
        if x.norm() < 1e-9 {
            return Err(Error::Degenerate("look_at direction parallel to up".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Ok(Self::from_matrix(&r, &(-(r * eye))))
    }

    pub fn from_matrix(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        Self { rotation: crate::body::rotation::log_map(r), translation: *t }
    }

    /// Same transform with the rotation angle reduced into `[0, π]`.
    pub fn canonical(&self) -> Self {
        Self { rotation: canonicalize(&self.rotation), translation: self.translation }
    }
}

/// Intrinsics plus one extrinsic per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub extrinsics: Vec<Extrinsic>,
    /// Seconds, one per extrinsic.
    pub timestamps: Vec<f64>,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.extrinsics.len() != self.timestamps.len() {
            return Err(Error::Dimension(format!(
                "{} extrinsics but {} timestamps",
                self.extrinsics.len(),
                self.timestamps.len()
            )));
        }
        Ok(())
    }
}

/// Axis-aligned image box, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn is_well_ordered(&self) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max
    }

    /// Tight bounds of a point set; `None` when empty.
    pub fn bounding(points: impl IntoIterator<Item = Vector2<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = BBox::new(first.x, first.y, first.x, first.y);
        for p in it {
            b.x_min = b.x_min.min(p.x);
            b.y_min = b.y_min.min(p.y);
            b.x_max = b.x_max.max(p.x);
            b.y_max = b.y_max.max(p.y);
        }
        Some(b)
    }

    fn intersection(&self, o: &BBox) -> f64 {
        let w = (self.x_max.min(o.x_max) - self.x_min.max(o.x_min)).max(0.0);
        let h = (self.y_max.min(o.y_max) - self.y_min.max(o.y_min)).max(0.0);
        w * h
    }

    fn hull(&self, o: &BBox) -> BBox {
        BBox::new(self.x_min.min(o.x_min), self.y_min.min(o.y_min), self.x_max.max(o.x_max), self.y_max.max(o.y_max))
    }
}

/// 2D detections for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation2D {
    /// One keypoint per joint, pixels.
    pub kpt2d: Vec<[f64; 2]>,
    /// Per-keypoint confidence; zero marks an invisible keypoint.
    pub confidence: Vec<f64>,
    /// `None` when the subject is not visible.
    pub box2d: Option<BBox>,
}

/// Project world points through one frame's extrinsic. Points closer than
/// [`MIN_DEPTH`] in front of the camera are flagged invalid (and mapped to
/// the principal point).
pub fn project(points: &[Vector3<f64>], intrinsics: &Intrinsics, extrinsic: &Extrinsic) -> (Vec<Vector2<f64>>, Vec<bool>) {
    let r = extrinsic.rotation_matrix();
    points
        .iter()
        .map(|p| {
            let c = r * p + extrinsic.translation;
            match intrinsics.project_camera(&c) {
                Some(px) => (px, true),
                None => (Vector2::new(intrinsics.cx, intrinsics.cy), false),
            }
        })
        .unzip()
}

fn check_box(b: &BBox) -> Result<()> {
    if !b.is_well_ordered() || !(b.area() > 0.0) {
        return Err(Error::Degenerate(format!("box {b:?} has zero area or is not well-ordered")));
    }
    Ok(())
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    check_box(a)?;
    check_box(b)?;
    let inter = a.intersection(b);
    Ok(inter / (a.area() + b.area() - inter))
}

/// Generalized IoU: IoU minus the fraction of the enclosing box not covered
/// by the union. Lies in `(-1, 1]`.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    let i = iou(a, b)?;
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull(b).area();
    Ok(i - (hull - union) / hull)
}

/// The eight corners of the world-axis-aligned box around `points`.
pub fn aabb_corners(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if points.is_empty() {
        return vec![];
    }
    (0..8)
        .map(|k| {
            Vector3::new(
                if k & 1 == 0 { lo.x } else { hi.x },
                if k & 2 == 0 { lo.y } else { hi.y },
                if k & 4 == 0 { lo.z } else { hi.z },
            )
        })
        .collect()
}
