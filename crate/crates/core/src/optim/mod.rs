//! Windowed gradient descent over the motion objective.
//!
//! Each window is minimized with plain gradient descent and a backtracking
//! line search. Sample placement on the body surface is recomputed at every
//! iterate; within a line search it is held fixed, and every accepted step
//! is re-checked against the loss with a fresh placement so the recorded
//! trace never increases.

use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body::kinematics::{ParamGrad, ShapedBody};
use crate::body::params::{BodyParams, MotionSequence};
use crate::body::rotation::slerp;
use crate::error::{Error, Result};
use crate::losses::{detect_stable_feet, LossBreakdown, LossConfig, MotionWindow, Objective};
use crate::scene::SceneMesh;
use crate::sim::PointCloudFrame;

/// Backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearch {
    /// Factor applied to the step after a rejected trial.
    pub shrink: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Factor applied to the step after an accepted one.
    pub grow: f64,
    /// Smallest step tried before the search gives up.
    pub min_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { shrink: 0.5, armijo: 1e-4, grow: 2.0, min_step: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub loss: LossConfig,
    pub window_k: usize,
    pub window_overlap: usize,
    /// First trial step of the line search.
    pub step_size: f64,
    /// Upper bound on the step the search may grow to.
    pub max_step: f64,
    pub max_iters: usize,
    /// Stop once the gradient's largest component falls below this.
    pub grad_tol: f64,
    /// Stop once an accepted step lowers the loss by less than this
    /// fraction of its value. Zero disables the test.
    pub rel_tol: f64,
    pub line_search: LineSearch,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            window_k: 40,
            window_overlap: 10,
            step_size: 0.05,
            max_step: 1.0,
            max_iters: 300,
            grad_tol: 1e-5,
            rel_tol: 0.0,
            line_search: LineSearch::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.weights.validate()?;
        if self.window_k < 3 {
            return Err(Error::InvalidInput(format!("window_k must be at least 3, got {}", self.window_k)));
        }
        if self.window_overlap >= self.window_k {
            return Err(Error::InvalidInput(format!(
                "window_overlap {} must be smaller than window_k {}",
                self.window_overlap, self.window_k
            )));
        }
        let ls = &self.line_search;
        let ok = self.step_size > 0.0
            && self.max_step >= self.step_size
            && self.grad_tol >= 0.0
            && self.rel_tol >= 0.0
            && ls.shrink > 0.0
            && ls.shrink < 1.0
            && ls.armijo > 0.0
            && ls.armijo < 1.0
            && ls.grow >= 1.0
            && ls.min_step > 0.0;
        if !ok {
            return Err(Error::InvalidInput("step size or line search parameters out of range".into()));
        }
        Ok(())
    }
}

/// Outcome of one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub start: usize,
    pub end: usize,
    pub iterations: usize,
    pub initial: LossBreakdown,
    #[serde(rename = "final")]
    pub final_loss: LossBreakdown,
    /// Stopped on the gradient or relative-decrease tolerance.
    pub converged: bool,
    /// The line search hit its floor step; the best iterate is returned.
    pub line_search_failed: bool,
    /// Loss after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimReport {
    pub windows: Vec<WindowReport>,
    pub wall_time_s: f64,
}

const PER_FRAME: usize = 75;

/// Flatten per-frame gradients as `[θ (72), t (3)]` per frame.
pub fn flatten_grad(grads: &[ParamGrad]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grads.len() * PER_FRAME);
    for g in grads {
        for t in &g.theta {
            out.extend(t.iter());
        }
        out.extend(g.trans.iter());
    }
    out
}

/// Gradient of the total loss with respect to every pose and translation in
/// the window, laid out as in [`flatten_grad`]. Shape and the initial poses
/// are constants.
pub fn gradient(window: &MotionWindow, body: &ShapedBody, scene: &SceneMesh, cfg: &LossConfig) -> Result<Vec<f64>> {
    let obj = Objective::new(window, body, scene, cfg)?;
    let layout = obj.layout(&window.params)?;
    let (_, g) = obj.evaluate(&window.params, &layout, true)?;
    Ok(flatten_grad(&g.expect("gradient requested")))
}

fn step(params: &[BodyParams], grads: &[ParamGrad], alpha: f64) -> Vec<BodyParams> {
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| {
            let mut q = p.clone();
            for (t, d) in q.theta.iter_mut().zip(&g.theta) {
                *t -= d * alpha;
            }
            q.trans -= g.trans * alpha;
            q
        })
        .collect()
}

/// Minimize the objective over one window, starting from `window.params`.
pub fn optimize_window(
    window: &MotionWindow,
    body: &ShapedBody,
    scene: &SceneMesh,
    cfg: &OptimConfig,
) -> Result<(Vec<BodyParams>, WindowReport)> {
    cfg.validate()?;
    let obj = Objective::new(window, body, scene, &cfg.loss)?;
    let mut params = window.params.clone();
    let mut layout = obj.layout(&params)?;
    let (initial, g) = obj.evaluate(&params, &layout, true)?;
    let mut report = WindowReport {
        start: 0,
        end: window.len(),
        iterations: 0,
        initial,
        final_loss: initial,
        converged: false,
        line_search_failed: false,
        trace: vec![initial.total],
    };
    if cfg.loss.weights == crate::losses::LossWeights::zero() {
        report.converged = true;
        return Ok((params, report));
    }
    let mut grads = g.expect("gradient requested");
    let mut current = initial;
    let mut alpha = cfg.step_size;
    let ls = &cfg.line_search;

    while report.iterations < cfg.max_iters {
        let flat = flatten_grad(&grads);
        let g_inf = flat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if g_inf < cfg.grad_tol {
            report.converged = true;
            break;
        }
        let g2: f64 = flat.iter().map(|v| v * v).sum();
        let accepted = loop {
            if alpha < ls.min_step {
                break None;
            }
            let trial = step(&params, &grads, alpha);
            let frozen = match obj.evaluate(&trial, &layout, false) {
                Ok((b, _)) => b.total,
                Err(Error::NonFinite(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if frozen <= current.total - ls.armijo * alpha * g2 {
                let fresh = obj.layout(&trial)?;
                let (b, g) = obj.evaluate(&trial, &fresh, true)?;
                if b.total <= current.total {
                    break Some((trial, fresh, b, g.expect("gradient requested")));
                }
            }
            alpha *= ls.shrink;
        };
        let Some((trial, fresh, b, g)) = accepted else {
            report.line_search_failed = true;
            break;
        };
        let decrease = current.total - b.total;
        params = trial;
        layout = fresh;
        current = b;
        grads = g;
        report.iterations += 1;
        report.trace.push(current.total);
        alpha = (alpha * ls.grow).min(cfg.max_step);
        if cfg.rel_tol > 0.0 && decrease <= cfg.rel_tol * current.total.abs() {
            report.converged = true;
            break;
        }
    }
    report.final_loss = current;
    Ok((params, report))
}

/// Window ranges covering `0..n`: steps of `k - overlap`, with the last
/// window shifted back so it ends at `n`.
pub fn window_ranges(n: usize, k: usize, overlap: usize) -> Vec<(usize, usize)> {
    if n <= k {
        return vec![(0, n)];
    }
    let stride = (k - overlap).max(1);
    let mut out = Vec::new();
    let mut s = 0;
    loop {
        if s + k >= n {
            out.push((n - k, n));
            break;
        }
        out.push((s, s + k));
        s += stride;
    }
    out.dedup();
    out
}

/// Interpolate two frames: linear in translation, spherical per joint.
pub fn blend_params(a: &BodyParams, b: &BodyParams, w: f64) -> BodyParams {
    if a == b {
        return a.clone();
    }
    let mut out = a.clone();
    for (o, (ta, tb)) in out.theta.iter_mut().zip(a.theta.iter().zip(&b.theta)) {
        *o = if ta == tb { *ta } else { slerp(ta, tb, w) };
    }
    out.trans = a.trans * (1.0 - w) + b.trans * w;
    out
}

/// Refine a whole sequence window by window.
///
/// `initial` is the inertial motion: it seeds the optimization, anchors the
/// pose prior and gives the stable-foot labels. Each window after the first
/// starts from the previous result on the shared frames and from the
/// initial motion shifted by the translation correction found so far on the
/// rest. Overlapping frames are cross-faded from the earlier window to the
/// later one.
pub fn optimize_sequence(
    initial: &MotionSequence,
    clouds: &[PointCloudFrame],
    body: &ShapedBody,
    scene: &SceneMesh,
    cfg: &OptimConfig,
) -> Result<(MotionSequence, OptimReport)> {
    cfg.validate()?;
    initial.validate()?;
    let n = initial.len();
    if clouds.len() != n {
        return Err(Error::Dimension(format!("{} clouds for {n} frames", clouds.len())));
    }
    if n < 3 {
        return Err(Error::WindowTooShort { needed: 3, got: n });
    }
    let started = Instant::now();
    let stable = detect_stable_feet(body, &initial.frames, initial.rate_hz, cfg.loss.stable_threshold_mps)?;
    let mut out: Vec<Option<BodyParams>> = vec![None; n];
    let mut report = OptimReport::default();
    let mut correction = Vector3::zeros();

    for (s, e) in window_ranges(n, cfg.window_k, cfg.window_overlap) {
        let seed: Vec<BodyParams> = (s..e)
            .map(|i| match &out[i] {
                Some(p) => p.clone(),
                None => {
                    let mut p = initial.frames[i].clone();
                    p.trans += correction;
                    p
                }
            })
            .collect();
        let window = MotionWindow::new(seed, initial.rate_hz)
            .with_init((s..e).map(|i| initial.frames[i].theta.clone()).collect())?
            .with_clouds(&clouds[s..e])?
            .with_stable(stable[s..e].to_vec())?;
        let (opt, mut wr) = optimize_window(&window, body, scene, cfg)?;
        wr.start = s;
        wr.end = e;
        report.windows.push(wr);

        let shared: Vec<usize> = (s..e).filter(|&i| out[i].is_some()).collect();
        let m = shared.len() as f64;
        for (j, i) in shared.iter().enumerate() {
            let w = (j + 1) as f64 / (m + 1.0);
            let prev = out[*i].take().expect("shared frame");
            out[*i] = Some(blend_params(&prev, &opt[i - s], w));
        }
        for i in s..e {
            if out[i].is_none() {
                out[i] = Some(opt[i - s].clone());
            }
        }
        correction = opt[e - s - 1].trans - initial.frames[e - 1].trans;
    }

    let frames = out.into_iter().map(|p| p.expect("every frame covered")).collect();
    let seq = MotionSequence { frames, rate_hz: initial.rate_hz, frame_times: initial.frame_times.clone() };
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((seq, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossWeights;
    use crate::scene::{make_test_scene, SceneSpec};
    use crate::sim::{simulate, SimConfig};

    #[test]
    fn ranges_cover_the_sequence() {
        assert_eq!(window_ranges(30, 40, 10), vec![(0, 30)]);
        assert_eq!(window_ranges(40, 40, 10), vec![(0, 40)]);
        assert_eq!(window_ranges(100, 40, 10), vec![(0, 40), (30, 70), (60, 100)]);
        let r = window_ranges(200, 40, 10);
        assert_eq!(r.first(), Some(&(0, 40)));
        assert_eq!(r.last(), Some(&(160, 200)));
        assert!(r.windows(2).all(|w| w[1].0 < w[0].1));
        assert_eq!(window_ranges(9, 3, 0), vec![(0, 3), (3, 6), (6, 9)]);
    }

    #[test]
    fn blend_of_equal_frames_is_exact() {
        let mut p = BodyParams::zero();
        p.theta[3] = Vector3::new(0.3, -0.2, 0.1);
        p.trans = Vector3::new(1.0, 2.0, 0.9);
        assert_eq!(blend_params(&p, &p, 0.37), p);
        let mut q = p.clone();
        q.trans.x += 1.0;
        assert!((blend_params(&p, &q, 0.25).trans.x - 1.25).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(OptimConfig::default().validate().is_ok());
        let bad = [
            OptimConfig { window_k: 2, ..Default::default() },
            OptimConfig { window_overlap: 40, ..Default::default() },
            OptimConfig { step_size: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    fn short_capture(frames: usize) -> crate::sim::SimulatedCapture {
        let mut cfg = SimConfig::default();
        cfg.motion.duration_s = frames as f64 / cfg.motion.rate_hz;
        cfg.camera = None;
        simulate(&cfg).unwrap()
    }

    #[test]
    fn zero_weights_return_the_input() {
        let cap = short_capture(6);
        let w = MotionWindow::new(cap.drifted.frames.clone(), 20.0).with_clouds(&cap.clouds).unwrap();
        let cfg = OptimConfig { loss: LossConfig { weights: LossWeights::zero(), ..Default::default() }, ..Default::default() };
        let (p, r) = optimize_window(&w, &cap.body, &cap.scene, &cfg).unwrap();
        assert_eq!(p, w.params);
        assert!(r.iterations <= 1);
    }

    #[test]
    fn stationary_input_is_returned() {
        let frames: Vec<BodyParams> = (0..5)
            .map(|i| BodyParams::zero().with_trans(Vector3::new(0.1 * i as f64, 0.0, 0.9)))
            .collect();
        let template = crate::body::BodyTemplate::procedural(&Default::default()).unwrap();
        let body = ShapedBody::new(&template, &crate::body::KinematicTree::smpl(), &[0.0; 10]).unwrap();
        let scene = make_test_scene(&SceneSpec::flat(10.0)).unwrap();
        let w = MotionWindow::new(frames, 20.0);
        let smooth = LossWeights { trans: 1.0, orit: 1.0, jts: 1.0, ..LossWeights::zero() };
        let cfg = OptimConfig { loss: LossConfig { weights: smooth, ..Default::default() }, ..Default::default() };
        let g = gradient(&w, &body, &scene, &cfg.loss).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-8));
        let (p, r) = optimize_window(&w, &body, &scene, &cfg).unwrap();
        assert_eq!(p, w.params);
        assert!(r.iterations <= 1 && r.converged);
    }

    #[test]
    fn trace_never_increases_and_drift_is_pulled_in() {
        let cap = short_capture(12);
        let stable = detect_stable_feet(&cap.body, &cap.drifted.frames, 20.0, 0.1).unwrap();
        let mut start = cap.drifted.frames.clone();
        for p in &mut start {
            p.trans.x += 0.3;
        }
        let w = MotionWindow::new(start, 20.0)
            .with_init(cap.drifted.frames.iter().map(|p| p.theta.clone()).collect())
            .unwrap()
            .with_clouds(&cap.clouds)
            .unwrap()
            .with_stable(stable)
            .unwrap();
        let (_, r) = optimize_window(&w, &cap.body, &cap.scene, &OptimConfig::default()).unwrap();
        assert!(r.trace.windows(2).all(|t| t[1] <= t[0]));
        let before = r.initial.m2p + r.initial.contact;
        let after = r.final_loss.m2p + r.final_loss.contact;
        assert!(after < 0.05 * before, "{after} vs {before}");
    }
}
