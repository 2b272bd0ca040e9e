//! Inertial-style drift: locally accurate, globally biased.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::body::params::MotionSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftModel {
    /// Translation drift rate, m/s.
    pub trans_bias_per_s: [f64; 3],
    /// Per-frame translation jitter, meters.
    pub trans_noise_std: f64,
    /// Per-joint axis-angle noise, radians.
    pub orient_noise_std: f64,
    /// Correlation time of the orientation noise, seconds. `None` draws
    /// independent noise each frame.
    pub orient_noise_corr_s: Option<f64>,
    pub seed: u64,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            trans_bias_per_s: [0.05, 0.0, 0.0],
            trans_noise_std: 0.0,
            orient_noise_std: 0.01,
            orient_noise_corr_s: None,
            seed: 0,
        }
    }
}

impl DriftModel {
    pub fn zero() -> Self {
        Self { trans_bias_per_s: [0.0; 3], trans_noise_std: 0.0, orient_noise_std: 0.0, orient_noise_corr_s: None, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.trans_noise_std >= 0.0) || !(self.orient_noise_std >= 0.0) {
            return Err(Error::InvalidInput("drift noise deviations must be non-negative".into()));
        }
        if !self.trans_bias_per_s.iter().all(|b| b.is_finite()) {
            return Err(Error::NonFinite("drift bias".into()));
        }
        if let Some(tc) = self.orient_noise_corr_s {
            if !(tc > 0.0) {
                return Err(Error::InvalidInput(format!("correlation time must be positive, got {tc}")));
            }
        }
        Ok(())
    }
}

/// Independent RNG stream for one frame of one seeded process.
pub(crate) fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64);
    rng
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Corrupt a ground-truth sequence the way body-worn inertial capture does.
pub fn inject_drift(gt: &MotionSequence, model: &DriftModel) -> Result<MotionSequence> {
    gt.validate()?;
    model.validate()?;
    let mut out = gt.clone();
    let bias = Vector3::from(model.trans_bias_per_s);
    let t0 = gt.frame_times.first().copied().unwrap_or(0.0);
    let joints = gt.frames.first().map_or(0, |f| f.theta.len());
    let mut state = vec![Vector3::zeros(); joints];
    let mut prev_time = t0;
    for (i, frame) in out.frames.iter_mut().enumerate() {
        let mut rng = frame_rng(model.seed, i);
        let time = gt.frame_times[i];
        let mut offset = bias * (time - t0);
        if model.trans_noise_std > 0.0 {
            offset += gaussian3(&mut rng) * model.trans_noise_std;
        }
        if offset != Vector3::zeros() {
            frame.trans += offset;
        }
        if model.orient_noise_std > 0.0 {
            let (a, b) = match model.orient_noise_corr_s {
                Some(tc) if i > 0 => {
                    let a = (-(time - prev_time) / tc).exp();
                    (a, (1.0 - a * a).sqrt())
                }
                _ => (0.0, 1.0),
            };
            for (theta, s) in frame.theta.iter_mut().zip(state.iter_mut()) {
                *s = *s * a + gaussian3(&mut rng) * (b * model.orient_noise_std);
                *theta += *s;
            }
        }
        prev_time = time;
    }
    Ok(out)
}
