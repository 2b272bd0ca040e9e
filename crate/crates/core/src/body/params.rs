use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rotation::canonicalize;
use super::tree::JOINT_COUNT;
use crate::error::{Error, Result};

pub const POSE_DIM: usize = 3 * JOINT_COUNT;
pub const SHAPE_DIM: usize = 10;

/// Pose, root translation and shape for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    /// Per-joint axis-angle rotations; entry 0 is the global (pelvis)
    /// orientation, the rest are relative to the parent joint.
    pub theta: Vec<Vector3<f64>>,
    /// Root translation, meters.
    pub trans: Vector3<f64>,
    pub beta: Vec<f64>,
}

impl BodyParams {
    pub fn zero() -> Self {
        Self {
            theta: vec![Vector3::zeros(); JOINT_COUNT],
            trans: Vector3::zeros(),
            beta: vec![0.0; SHAPE_DIM],
        }
    }

    pub fn with_trans(mut self, trans: Vector3<f64>) -> Self {
        self.trans = trans;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta.len() != JOINT_COUNT {
            return Err(Error::Dimension(format!("theta has {} joints, expected {JOINT_COUNT}", self.theta.len())));
        }
        if self.beta.len() != SHAPE_DIM {
            return Err(Error::Dimension(format!("beta has {} entries, expected {SHAPE_DIM}", self.beta.len())));
        }
        let finite = self.theta.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.trans.iter().all(|x| x.is_finite())
            && self.beta.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidInput("body parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Global (pelvis) orientation.
    pub fn root_orient(&self) -> Vector3<f64> {
        self.theta[0]
    }

    /// Pose as a flat 72-vector.
    pub fn theta_flat(&self) -> Vec<f64> {
        self.theta.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn set_theta_flat(&mut self, flat: &[f64]) {
        for (j, v) in self.theta.iter_mut().enumerate() {
            *v = Vector3::new(flat[3 * j], flat[3 * j + 1], flat[3 * j + 2]);
        }
    }

    /// Reduce every joint angle into `[0, π]`.
    pub fn canonicalized(&self) -> Self {
        let mut out = self.clone();
        for v in out.theta.iter_mut() {
            *v = canonicalize(v);
        }
        out
    }
}

impl Default for BodyParams {
    fn default() -> Self {
        Self::zero()
    }
}

/// Uniformly sampled sequence of body parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frames: Vec<BodyParams>,
    pub rate_hz: f64,
    pub frame_times: Vec<f64>,
}

impl MotionSequence {
    /// Frames at `start + i / rate_hz`.
    pub fn uniform(frames: Vec<BodyParams>, rate_hz: f64, start: f64) -> Self {
        let frame_times = (0..frames.len()).map(|i| start + i as f64 / rate_hz).collect();
        Self { frames, rate_hz, frame_times }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.frame_times.len() {
            return Err(Error::Dimension(format!(
                "{} frames but {} timestamps",
                self.frames.len(),
                self.frame_times.len()
            )));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!("rate must be positive, got {}", self.rate_hz)));
        }
        if self.frame_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("frame times must be strictly increasing".into()));
        }
        for f in &self.frames {
            f.validate()?;
        }
        Ok(())
    }

    /// True when consecutive timestamps differ from `1 / rate_hz` by at most `tol` seconds.
    pub fn is_uniform(&self, tol: f64) -> bool {
        let dt = 1.0 / self.rate_hz;
        self.frame_times.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= tol)
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            frames: self.frames[start..end].to_vec(),
            rate_hz: self.rate_hz,
            frame_times: self.frame_times[start..end].to_vec(),
        }
    }
}
