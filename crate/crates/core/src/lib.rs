//! Scene-aware refinement of drifting inertial motion capture.
//!
//! The crate covers the full loop: a procedural articulated body model, a
//! triangle scene with exact closest-point and ray queries, a synthetic
//! LiDAR / IMU / camera simulator, the motion objective (smoothness, foot
//! contact, pose prior, viewpoint-aware mesh-to-points), a windowed gradient
//! descent optimizer, per-frame camera extrinsic refinement, temporal
//! synchronization and trajectory calibration, and pose / trajectory metrics.

pub mod body;
pub mod calib;
pub mod camera;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod scene;
pub mod sim;

pub use error::{Error, Result};
