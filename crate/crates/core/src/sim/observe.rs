//! Simulated 2-D detections from a pinhole camera.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{project, BBox, Extrinsic, Intrinsics, Observation2D};
use crate::error::Result;

/// Detections for one frame plus the per-keypoint visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraObservation {
    pub observation: Observation2D,
    /// In front of the camera and inside the image.
    pub visible: Vec<bool>,
}

/// Project joints and the body surface into the image.
///
/// Keypoints behind the camera or outside the image get zero confidence.
/// The box bounds every vertex in front of the camera and is not clipped to
/// the image, so it stays consistent with the extrinsic objective.
pub fn camera_observe(
    intrinsics: &Intrinsics,
    extrinsic: &Extrinsic,
    joints3d: &[Vector3<f64>],
    body_verts: &[Vector3<f64>],
) -> Result<CameraObservation> {
    intrinsics.validate()?;
    let (px, valid) = project(joints3d, intrinsics, extrinsic);
    let visible: Vec<bool> = px.iter().zip(&valid).map(|(p, v)| *v && intrinsics.contains(p)).collect();
    let (vpx, vvalid) = project(body_verts, intrinsics, extrinsic);
    let box2d = BBox::bounding(vpx.into_iter().zip(vvalid).filter(|(_, v)| *v).map(|(p, _)| p));
    Ok(CameraObservation {
        observation: Observation2D {
            kpt2d: px.iter().map(|p| [p.x, p.y]).collect(),
            confidence: visible.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
            box2d,
        },
        visible,
    })
}
