//! Temporal synchronization by jump peaks, resampling onto a common grid,
//! and planar trajectory alignment between the inertial and map frames.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::params::{BodyParams, MotionSequence};
use crate::body::rotation::{log_map, rodrigues, slerp};
use crate::body::tree::KinematicTree;
use crate::error::{Error, Result};
use crate::sim::PointCloudFrame;

/// A scalar channel sampled at increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSignal {
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimedSignal {
    pub fn new(timestamps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = Self { timestamps, values };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "{} timestamps but {} values",
                self.timestamps.len(),
                self.values.len()
            )));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("timestamps must be strictly increasing".into()));
        }
        if self.values.iter().chain(&self.timestamps).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal".into()));
        }
        Ok(())
    }

    /// Root height of a motion.
    pub fn root_height(seq: &MotionSequence) -> Result<Self> {
        Self::new(seq.frame_times.clone(), seq.frames.iter().map(|p| p.trans.z).collect())
    }

    /// Height of the lowest body return per sweep. Sweeps without body
    /// returns are skipped.
    pub fn lowest_body_point(clouds: &[PointCloudFrame]) -> Result<Self> {
        let (t, v) = clouds
            .iter()
            .filter_map(|c| {
                let low = c.body_points().iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
                low.is_finite().then_some((c.time, low))
            })
            .unzip();
        Self::new(t, v)
    }
}

/// Local maxima with at least `min_prominence` prominence, greedily thinned
/// so no two kept peaks are closer than `min_separation` seconds. Higher
/// peaks win; equal heights go to the earlier one. Peak times are refined by
/// a parabola through the peak sample and its neighbours.
pub fn detect_peaks(signal: &TimedSignal, min_prominence: f64, min_separation: f64) -> Result<Vec<f64>> {
    signal.validate()?;
    let (t, y) = (&signal.timestamps, &signal.values);
    let n = y.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("peak detection needs at least 3 samples, got {n}")));
    }
    let mut candidates = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i] > y[i - 1] {
            // Walk across a plateau; a peak needs a strict drop on its right.
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                candidates.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let prominence = |p: usize| {
        let h = y[p];
        let mut left_min = h;
        let mut k = p;
        while k > 0 {
            k -= 1;
            if y[k] > h {
                break;
            }
            left_min = left_min.min(y[k]);
        }
        let mut right_min = h;
        let mut k = p;
        while k + 1 < n {
            k += 1;
            if y[k] > h {
                break;
            }
            right_min = right_min.min(y[k]);
        }
        h - left_min.max(right_min)
    };
    candidates.retain(|&p| prominence(p) >= min_prominence);
    candidates.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));

    let mut kept: Vec<usize> = Vec::new();
    for p in candidates {
        if kept.iter().all(|&q| (t[p] - t[q]).abs() >= min_separation) {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|p| refine_peak(t, y, p)).collect())
}

fn refine_peak(t: &[f64], y: &[f64], p: usize) -> f64 {
    if p == 0 || p + 1 >= y.len() {
        return t[p];
    }
    // Work relative to the peak time so the result is exactly equivariant
    // under shifts of the time axis.
    let (x0, x2) = (t[p - 1] - t[p], t[p + 1] - t[p]);
    let (y0, y1, y2) = (y[p - 1], y[p], y[p + 1]);
    let d0 = (y0 - y1) / x0;
    let d2 = (y2 - y1) / x2;
    let a = (d2 - d0) / (x2 - x0);
    if !(a < 0.0) {
        return t[p];
    }
    let b = d0 - a * x0;
    let dx = (-b / (2.0 * a)).clamp(x0, x2);
    t[p] + dx
}

/// A timestamped motion stream (inertial capture, or poses on another clock).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionStream {
    pub id: String,
    pub timestamps: Vec<f64>,
    pub frames: Vec<BodyParams>,
}

impl MotionStream {
    pub fn from_sequence(id: impl Into<String>, seq: &MotionSequence) -> Self {
        Self { id: id.into(), timestamps: seq.frame_times.clone(), frames: seq.frames.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.frames.len() {
            return Err(Error::Dimension(format!(
                "stream {}: {} timestamps for {} frames",
                self.id,
                self.timestamps.len(),
                self.frames.len()
            )));
        }
        if self.timestamps.len() < 2 {
            return Err(Error::InvalidInput(format!("stream {} needs at least 2 samples", self.id)));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(format!("stream {}: timestamps must be strictly increasing", self.id)));
        }
        Ok(())
    }

    /// Value at time `t` (stream clock): linear in translation and shape,
    /// spherical per joint rotation. `None` outside the sampled span.
    pub fn sample(&self, t: f64) -> Option<BodyParams> {
        let ts = &self.timestamps;
        if !(t >= ts[0] && t <= *ts.last()?) {
            return None;
        }
        let hi = ts.partition_point(|&x| x < t);
        if ts[hi] == t {
            return Some(self.frames[hi].clone());
        }
        let lo = hi - 1;
        let w = (t - ts[lo]) / (ts[hi] - ts[lo]);
        let (a, b) = (&self.frames[lo], &self.frames[hi]);
        let mut out = a.clone();
        for (o, (ra, rb)) in out.theta.iter_mut().zip(a.theta.iter().zip(&b.theta)) {
            *o = slerp(ra, rb, w);
        }
        out.trans = a.trans * (1.0 - w) + b.trans * w;
        for (o, (ba, bb)) in out.beta.iter_mut().zip(a.beta.iter().zip(&b.beta)) {
            *o = ba * (1.0 - w) + bb * w;
        }
        Some(out)
    }
}

/// Streams placed on a common clock and grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedStreams {
    /// Offset subtracted from each stream's timestamps; the first stream is
    /// the reference and has offset 0.
    pub offsets: Vec<f64>,
    pub ids: Vec<String>,
    pub sequences: Vec<MotionSequence>,
}

/// Constant clock offset of each stream relative to the first one, from
/// matched peak times (`peaks[s]` are the peaks seen in stream `s`, in order).
pub fn estimate_offsets(peaks: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(reference) = peaks.first() else {
        return Err(Error::InvalidInput("no peak lists given".into()));
    };
    if reference.is_empty() {
        return Err(Error::PeakMismatch("reference stream has no peaks".into()));
    }
    peaks
        .iter()
        .enumerate()
        .map(|(s, p)| {
            if p.len() != reference.len() {
                return Err(Error::PeakMismatch(format!(
                    "stream {s} has {} peaks, reference has {}",
                    p.len(),
                    reference.len()
                )));
            }
            Ok(p.iter().zip(reference).map(|(a, b)| a - b).sum::<f64>() / p.len() as f64)
        })
        .collect()
}

/// Shift every stream onto the reference clock and resample all of them at
/// `target_hz` over the span they share.
pub fn align_streams(streams: &[MotionStream], peaks: &[Vec<f64>], target_hz: f64) -> Result<AlignedStreams> {
    if streams.is_empty() {
        return Err(Error::InvalidInput("no streams given".into()));
    }
    if peaks.len() != streams.len() {
        return Err(Error::PeakMismatch(format!("{} peak lists for {} streams", peaks.len(), streams.len())));
    }
    if !(target_hz > 0.0) {
        return Err(Error::InvalidInput(format!("target rate must be positive, got {target_hz}")));
    }
    for s in streams {
        s.validate()?;
    }
    let offsets = estimate_offsets(peaks)?;
    let start = streams.iter().zip(&offsets).map(|(s, o)| s.timestamps[0] - o).fold(f64::NEG_INFINITY, f64::max);
    let end = streams.iter().zip(&offsets).map(|(s, o)| s.timestamps.last().unwrap() - o).fold(f64::INFINITY, f64::min);
    if !(end > start) {
        return Err(Error::InvalidInput("streams do not overlap after alignment".into()));
    }
    let count = ((end - start) * target_hz + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..count).map(|i| start + i as f64 / target_hz).collect();
    let sequences = streams
        .iter()
        .zip(&offsets)
        .map(|(s, o)| {
            let frames = grid
                .iter()
                .map(|&t| {
                    // Clamp against rounding at the span ends.
                    let local = (t + o).clamp(s.timestamps[0], *s.timestamps.last().unwrap());
                    s.sample(local).expect("inside the stream span")
                })
                .collect();
            MotionSequence { frames, rate_hz: target_hz, frame_times: grid.clone() }
        })
        .collect();
    Ok(AlignedStreams { offsets, ids: streams.iter().map(|s| s.id.clone()).collect(), sequences })
}

/// Rotation about z followed by a planar translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarTransform {
    pub yaw: f64,
    pub translation: [f64; 2],
}

impl PlanarTransform {
    pub fn identity() -> Self {
        Self { yaw: 0.0, translation: [0.0, 0.0] }
    }

    pub fn rotation2(&self) -> Matrix2<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    pub fn rotation3(&self) -> Matrix3<f64> {
        crate::body::rotation::rot_z(self.yaw)
    }

    pub fn apply2(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation2() * p + Vector2::from(self.translation)
    }

    pub fn apply3(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation3() * p + Vector3::new(self.translation[0], self.translation[1], 0.0)
    }

    /// Move a whole motion: the pelvis joint follows the transform and the
    /// global orientation is rotated with it.
    pub fn apply_to_sequence(&self, seq: &MotionSequence, tree: &KinematicTree) -> MotionSequence {
        let root = tree.rest_offsets()[0];
        let r = self.rotation3();
        let mut out = seq.clone();
        for p in &mut out.frames {
            p.trans = self.apply3(&(root + p.trans)) - root;
            p.theta[0] = log_map(&(r * rodrigues(&p.theta[0])));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibResult {
    /// Inertial frame to world.
    pub r_wi: PlanarTransform,
    /// World to LiDAR map, supplied by the user.
    pub r_wl: PlanarTransform,
    /// Mean distance between the aligned trajectories, meters.
    pub residual: f64,
    /// The inertial trajectory is (nearly) collinear, so the rotation is
    /// poorly constrained.
    pub degenerate: bool,
}

/// Least-squares rigid alignment (yaw and planar translation, no scale)
/// carrying `imu_xy` onto `lidar_xy`, via the SVD of the cross-covariance.
pub fn trajectory_align(imu_xy: &[Vector2<f64>], lidar_xy: &[Vector2<f64>]) -> Result<CalibResult> {
    if imu_xy.len() != lidar_xy.len() {
        return Err(Error::Dimension(format!("{} inertial vs {} map positions", imu_xy.len(), lidar_xy.len())));
    }
    let n = imu_xy.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    if imu_xy.iter().chain(lidar_xy).any(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFinite("trajectory".into()));
    }
    let mean = |ps: &[Vector2<f64>]| ps.iter().sum::<Vector2<f64>>() / n as f64;
    let (ma, mb) = (mean(imu_xy), mean(lidar_xy));
    let spread_a: f64 = imu_xy.iter().map(|p| (p - ma).norm_squared()).sum::<f64>() / n as f64;
    let spread_b: f64 = lidar_xy.iter().map(|p| (p - mb).norm_squared()).sum::<f64>() / n as f64;
    let scale = 1.0 + ma.norm().max(mb.norm());
    if spread_a.sqrt() <= 1e-12 * scale || spread_b.sqrt() <= 1e-12 * scale {
        return Err(Error::Degenerate("trajectory points are coincident".into()));
    }
    let mut cov = Matrix2::zeros();
    let mut own = Matrix2::zeros();
    for (a, b) in imu_xy.iter().zip(lidar_xy) {
        cov += (b - mb) * (a - ma).transpose();
        own += (a - ma) * (a - ma).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let d = (u * vt).determinant().signum();
    let r = u * Matrix2::new(1.0, 0.0, 0.0, d) * vt;
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let t = mb - r * ma;
    let r_wi = PlanarTransform { yaw, translation: [t.x, t.y] };
    let residual = imu_xy.iter().zip(lidar_xy).map(|(a, b)| (r_wi.apply2(a) - b).norm()).sum::<f64>() / n as f64;
    let ev = own.symmetric_eigenvalues();
    let degenerate = ev.min() <= 1e-9 * ev.max();
    Ok(CalibResult { r_wi, r_wl: PlanarTransform::identity(), residual, degenerate })
}
