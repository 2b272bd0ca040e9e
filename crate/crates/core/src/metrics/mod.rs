//! Pose and trajectory metrics.
//!
//! Joint metrics take `frames × joints` positions in meters and report
//! millimeters. Trajectory metrics report meters.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type JointFrames = [Vec<Vector3<f64>>];

fn check_shapes(pred: &JointFrames, gt: &JointFrames) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no frames to evaluate".into()));
    }
    for (i, (a, b)) in pred.iter().zip(gt).enumerate() {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::Dimension(format!("frame {i}: {} predicted vs {} ground-truth joints", a.len(), b.len())));
        }
    }
    Ok(())
}

fn mean_distance(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

/// Per-frame mean joint error in meters, optionally after subtracting each
/// frame's pelvis (joint 0).
pub fn per_frame_joint_error(pred: &JointFrames, gt: &JointFrames, root_align: bool) -> Result<Vec<f64>> {
    check_shapes(pred, gt)?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(a, b)| {
            if root_align {
                let (ra, rb) = (a[0], b[0]);
                a.iter().zip(b).map(|(p, q)| ((p - ra) - (q - rb)).norm()).sum::<f64>() / a.len() as f64
            } else {
                mean_distance(a, b)
            }
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean per-joint position error with per-frame pelvis alignment, mm.
pub fn mpjpe(pred: &JointFrames, gt: &JointFrames) -> Result<f64> {
    mpjpe_with(pred, gt, true)
}

pub fn mpjpe_with(pred: &JointFrames, gt: &JointFrames, root_align: bool) -> Result<f64> {
    Ok(1000.0 * mean(&per_frame_joint_error(pred, gt, root_align)?))
}

/// Mean per-joint error in the world frame without any alignment, mm.
pub fn g_mpjpe(pred: &JointFrames, gt: &JointFrames) -> Result<f64> {
    mpjpe_with(pred, gt, false)
}

/// Per-frame mean joint error after similarity Procrustes alignment, meters.
pub fn per_frame_pa_error(pred: &JointFrames, gt: &JointFrames) -> Result<Vec<f64>> {
    check_shapes(pred, gt)?;
    pred.iter()
        .zip(gt)
        .enumerate()
        .map(|(i, (a, b))| {
            if a == b {
                return Ok(0.0);
            }
            let s = umeyama(a, b, true).map_err(|e| Error::Degenerate(format!("frame {i}: {e}")))?;
            if s.degenerate {
                return Err(Error::Degenerate(format!("frame {i}: joints are collinear")));
            }
            let aligned: Vec<_> = a.iter().map(|p| s.apply(p)).collect();
            Ok(mean_distance(&aligned, b))
        })
        .collect()
}

/// Mean per-joint error after per-frame rotation, translation and scale
/// alignment of the prediction onto the ground truth, mm.
pub fn pa_mpjpe(pred: &JointFrames, gt: &JointFrames) -> Result<f64> {
    Ok(1000.0 * mean(&per_frame_pa_error(pred, gt)?))
}

/// `x ↦ scale · R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
    /// The source points are (nearly) collinear, so the rotation about
    /// their common line is not determined.
    pub degenerate: bool,
}

impl Similarity {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros(), scale: 1.0, degenerate: false }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Closed-form least-squares alignment of `src` onto `dst` (rotation,
/// translation and, when `with_scale`, a uniform scale).
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<Similarity> {
    if src.len() != dst.len() {
        return Err(Error::Dimension(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    let n = src.len();
    if n == 0 {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let mu_s = src.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n as f64;
    let var_s = src.iter().map(|p| (p - mu_s).norm_squared()).sum::<f64>() / n as f64;
    let reference = 1.0 + mu_s.norm();
    if var_s.sqrt() <= 1e-12 * reference {
        return Err(Error::Degenerate("source points are coincident".into()));
    }
    let mut cov = Matrix3::zeros();
    let mut own = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
        own += (s - mu_s) * (s - mu_s).transpose();
    }
    cov /= n as f64;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut sign = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = u * sign * vt;
    let scale = if with_scale { (svd.singular_values.component_mul(&sign.diagonal())).sum() / var_s } else { 1.0 };
    let translation = mu_d - rotation * mu_s * scale;
    let ev = own.symmetric_eigenvalues();
    let mut sorted = [ev[0], ev[1], ev[2]];
    sorted.sort_by(f64::total_cmp);
    let degenerate = sorted[1] <= 1e-9 * sorted[2];
    Ok(Similarity { rotation, translation, scale, degenerate })
}

/// Positions over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
}

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, positions: Vec<Vector3<f64>>) -> Result<Self> {
        let t = Self { timestamps, positions };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.positions.len() {
            return Err(Error::Dimension(format!(
                "{} timestamps for {} positions",
                self.timestamps.len(),
                self.positions.len()
            )));
        }
        if self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("trajectory timestamps must be strictly increasing".into()));
        }
        if self.positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("trajectory".into()));
        }
        Ok(())
    }

    pub fn transformed(&self, s: &Similarity) -> Self {
        Self { timestamps: self.timestamps.clone(), positions: self.positions.iter().map(|p| s.apply(p)).collect() }
    }

    /// CSV with header `t,x,y,z`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y,z\n");
        for (t, p) in self.timestamps.iter().zip(&self.positions) {
            writeln!(out, "{t},{},{},{}", p.x, p.y, p.z).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, reason: &str| Error::Parse { file: "trajectory csv".into(), reason: format!("line {line}: {reason}") };
        let mut ts = Vec::new();
        let mut ps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|_| bad(i + 1, "not a number")))
                .collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(bad(i + 1, "expected 4 columns"));
            }
            ts.push(v[0]);
            ps.push(Vector3::new(v[1], v[2], v[3]));
        }
        Self::new(ts, ps)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse { file: path.display().to_string(), reason },
            other => other,
        })
    }
}

/// Summary of a set of errors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorStats {
    pub rmse: f64,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InvalidInput("no errors to summarize".into()));
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        let max = errors.iter().copied().fold(0.0, f64::max);
        // Rounding can leave the mean a hair above the RMSE for constant
        // errors; the ordering holds exactly in real arithmetic.
        Ok(Self { rmse: rmse.max(mean), mean, std, max: max.max(rmse.max(mean)) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prealign {
    #[default]
    None,
    Rigid,
    Similarity,
}

/// Similarity alignment of `pred` onto `gt` with the recovered scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PrealignResult {
    pub aligned: Trajectory,
    pub transform: Similarity,
}

/// Rotate, translate and scale `pred` onto `gt` in closed form.
pub fn affine_prealign(pred: &Trajectory, gt: &Trajectory) -> Result<PrealignResult> {
    check_trajectories(pred, gt)?;
    if pred.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: pred.len() });
    }
    let transform = umeyama(&pred.positions, &gt.positions, true)?;
    Ok(PrealignResult { aligned: pred.transformed(&transform), transform })
}

fn check_trajectories(pred: &Trajectory, gt: &Trajectory) -> Result<()> {
    pred.validate()?;
    gt.validate()?;
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted vs {} ground-truth poses", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    Ok(())
}

/// Per-frame position errors after the chosen alignment.
pub fn ate_errors(pred: &Trajectory, gt: &Trajectory, prealign: Prealign) -> Result<Vec<f64>> {
    check_trajectories(pred, gt)?;
    let aligned = match prealign {
        Prealign::None => pred.clone(),
        Prealign::Rigid if pred.len() == 1 => {
            pred.transformed(&Similarity { translation: gt.positions[0] - pred.positions[0], ..Similarity::identity() })
        }
        Prealign::Rigid => pred.transformed(&umeyama(&pred.positions, &gt.positions, false)?),
        Prealign::Similarity => affine_prealign(pred, gt)?.aligned,
    };
    Ok(aligned.positions.iter().zip(&gt.positions).map(|(a, b)| (a - b).norm()).collect())
}

/// Absolute trajectory error.
pub fn ate(pred: &Trajectory, gt: &Trajectory, prealign: Prealign) -> Result<ErrorStats> {
    ErrorStats::from_errors(&ate_errors(pred, gt, prealign)?)
}

/// Translational relative error over a fixed time step `delta` seconds,
/// converted to frames with the trajectory's mean rate.
pub fn rpe(pred: &Trajectory, gt: &Trajectory, delta: f64) -> Result<ErrorStats> {
    check_trajectories(pred, gt)?;
    let n = pred.len();
    let span = gt.timestamps[n - 1] - gt.timestamps[0];
    if !(delta > 0.0) || n < 2 || delta > span + 1e-9 {
        return Err(Error::InvalidInput(format!("delta {delta} s does not fit a {span} s trajectory")));
    }
    let dt = span / (n - 1) as f64;
    let step = ((delta / dt).round() as usize).max(1);
    if step >= n {
        return Err(Error::InvalidInput(format!("delta {delta} s exceeds the trajectory")));
    }
    let errors: Vec<f64> = (0..n - step)
        .map(|i| {
            let dp = pred.positions[i + step] - pred.positions[i];
            let dg = gt.positions[i + step] - gt.positions[i];
            (dp - dg).norm()
        })
        .collect();
    ErrorStats::from_errors(&errors)
}

/// Settings of [`evaluate_joints`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Subtract the pelvis before computing MPJPE.
    pub root_align: bool,
    pub prealign: Prealign,
    /// RPE interval, seconds.
    pub rpe_delta_s: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { root_align: true, prealign: Prealign::None, rpe_delta_s: 1.0 }
    }
}

/// Summary and per-frame errors of one predicted motion. Joint errors are
/// in millimeters, trajectory errors in meters. The trajectory is the pelvis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub frames: usize,
    pub options: EvalOptions,
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub g_mpjpe_mm: f64,
    pub ate_m: ErrorStats,
    /// `None` when the sequence is shorter than the RPE interval.
    pub rpe_m: Option<ErrorStats>,
    pub per_frame_mpjpe_mm: Vec<f64>,
    pub per_frame_pa_mpjpe_mm: Vec<f64>,
    pub per_frame_g_mpjpe_mm: Vec<f64>,
    pub per_frame_ate_m: Vec<f64>,
}

impl SequenceMetrics {
    /// One row per frame: `frame,time,mpjpe_mm,pa_mpjpe_mm,g_mpjpe_mm,ate_m`.
    pub fn per_frame_csv(&self, times: &[f64]) -> String {
        let mut out = String::from("frame,time,mpjpe_mm,pa_mpjpe_mm,g_mpjpe_mm,ate_m\n");
        for i in 0..self.frames {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{}",
                times[i],
                self.per_frame_mpjpe_mm[i],
                self.per_frame_pa_mpjpe_mm[i],
                self.per_frame_g_mpjpe_mm[i],
                self.per_frame_ate_m[i]
            );
        }
        out
    }
}

/// Every pose and pelvis-trajectory metric for a predicted motion.
pub fn evaluate_joints(pred: &JointFrames, gt: &JointFrames, times: &[f64], opts: &EvalOptions) -> Result<SequenceMetrics> {
    check_shapes(pred, gt)?;
    if times.len() != gt.len() {
        return Err(Error::Dimension(format!("{} timestamps for {} frames", times.len(), gt.len())));
    }
    let mm = |v: Vec<f64>| v.into_iter().map(|e| 1000.0 * e).collect::<Vec<_>>();
    let per_mpjpe = mm(per_frame_joint_error(pred, gt, opts.root_align)?);
    let per_g = mm(per_frame_joint_error(pred, gt, false)?);
    let per_pa = mm(per_frame_pa_error(pred, gt)?);
    let root = |j: &JointFrames| Trajectory::new(times.to_vec(), j.iter().map(|f| f[0]).collect());
    let (pt, gtt) = (root(pred)?, root(gt)?);
    let ate_err = ate_errors(&pt, &gtt, opts.prealign)?;
    let span = times[times.len() - 1] - times[0];
    let rpe_m = if opts.rpe_delta_s <= span { Some(rpe(&pt, &gtt, opts.rpe_delta_s)?) } else { None };
    Ok(SequenceMetrics {
        frames: gt.len(),
        options: *opts,
        mpjpe_mm: mean(&per_mpjpe),
        pa_mpjpe_mm: mean(&per_pa),
        g_mpjpe_mm: mean(&per_g),
        ate_m: ErrorStats::from_errors(&ate_err)?,
        rpe_m,
        per_frame_mpjpe_mm: per_mpjpe,
        per_frame_pa_mpjpe_mm: per_pa,
        per_frame_g_mpjpe_mm: per_g,
        per_frame_ate_m: ate_err,
    })
}
