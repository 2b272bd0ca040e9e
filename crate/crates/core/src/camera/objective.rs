//! Per-frame extrinsic objective: confidence-weighted keypoint reprojection
//! error plus a box overlap term, and its minimization.

use nalgebra::{Matrix2x3, Matrix6, SMatrix, Vector2, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BBox, Extrinsic, Intrinsics, Observation2D, MIN_DEPTH};
use crate::body::kinematics::ShapedBody;
use crate::body::params::BodyParams;
use crate::body::rotation::rodrigues_with_jacobian;
use crate::error::{Error, Result};

type Jac26 = SMatrix<f64, 2, 6>;

/// One frame of the extrinsic problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub observation: Observation2D,
    /// World joint positions (same order as the observed keypoints).
    pub kpt3d: Vec<Vector3<f64>>,
    /// World points whose projected bounds form the predicted 2D box.
    pub box3d: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraOptConfig {
    pub lambda_kpt: f64,
    pub lambda_box: f64,
    pub max_iters: usize,
    /// Stop when the gradient ∞-norm drops below this value.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking shrink factor.
    pub backtrack: f64,
    /// Optional pull towards the previous frame's solution (0 = independent frames).
    pub temporal_weight: f64,
}

impl Default for CameraOptConfig {
    fn default() -> Self {
        Self {
            lambda_kpt: 1.0,
            lambda_box: 1.0,
            max_iters: 100,
            grad_tol: 1e-10,
            armijo: 1e-4,
            backtrack: 0.5,
            temporal_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicResult {
    pub extrinsic: Extrinsic,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// No keypoint was visible: the initial extrinsic is returned.
    pub degenerate: bool,
}

struct Projector {
    r: nalgebra::Matrix3<f64>,
    jac: [nalgebra::Matrix3<f64>; 3],
    t: Vector3<f64>,
}

impl Projector {
    fn new(ext: &Extrinsic) -> Self {
        let (r, jac) = rodrigues_with_jacobian(&ext.rotation);
        Self { r, jac, t: ext.translation }
    }

    fn project(&self, k: &Intrinsics, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        k.project_camera(&(self.r * x + self.t))
    }

    /// Pixel position and its Jacobian with respect to (rotation, translation).
    fn project_jac(&self, k: &Intrinsics, x: &Vector3<f64>) -> Option<(Vector2<f64>, Jac26)> {
        let c = self.r * x + self.t;
        if c.z <= MIN_DEPTH {
            return None;
        }
        let iz = 1.0 / c.z;
        let px = Vector2::new(k.fx * c.x * iz + k.cx, k.fy * c.y * iz + k.cy);
        let dp = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * c.x * iz * iz, 0.0, k.fy * iz, -k.fy * c.y * iz * iz);
        let mut j = Jac26::zeros();
        for i in 0..3 {
            j.set_column(i, &(dp * (self.jac[i] * x)));
        }
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dp);
        Some((px, j))
    }
}

struct Eval {
    loss: f64,
    grad: Vector6<f64>,
    /// Gauss-Newton curvature of the keypoint term.
    gn: Matrix6<f64>,
}

/// Loss value of one frame under an extrinsic.
pub fn loss_cam(frame: &CameraFrame, k: &Intrinsics, ext: &Extrinsic, lambda_kpt: f64, lambda_box: f64) -> Result<f64> {
    evaluate(frame, k, ext, lambda_kpt, lambda_box, false).map(|e| e.loss)
}

/// Loss value and gradient with respect to `(rotation, translation)`.
pub fn loss_cam_with_grad(
    frame: &CameraFrame,
    k: &Intrinsics,
    ext: &Extrinsic,
    lambda_kpt: f64,
    lambda_box: f64,
) -> Result<(f64, Vector6<f64>)> {
    evaluate(frame, k, ext, lambda_kpt, lambda_box, true).map(|e| (e.loss, e.grad))
}

fn evaluate(frame: &CameraFrame, k: &Intrinsics, ext: &Extrinsic, lk: f64, lb: f64, want_grad: bool) -> Result<Eval> {
    let obs = &frame.observation;
    if obs.kpt2d.len() != frame.kpt3d.len() || obs.confidence.len() != frame.kpt3d.len() {
        return Err(Error::Dimension(format!(
            "{} 3D keypoints, {} 2D keypoints, {} confidences",
            frame.kpt3d.len(),
            obs.kpt2d.len(),
            obs.confidence.len()
        )));
    }
    let proj = Projector::new(ext);
    let mut out = Eval { loss: 0.0, grad: Vector6::zeros(), gn: Matrix6::zeros() };

    // Keypoints.
    let mut wsum = 0.0;
    let mut sq = 0.0;
    let mut g = Vector6::zeros();
    let mut h = Matrix6::zeros();
    for ((x, kp), &c) in frame.kpt3d.iter().zip(&obs.kpt2d).zip(&obs.confidence) {
        if !(c > 0.0) {
            continue;
        }
        if want_grad {
            let Some((px, j)) = proj.project_jac(k, x) else { continue };
            let r = px - Vector2::new(kp[0], kp[1]);
            wsum += c;
            sq += c * r.norm_squared();
            g += j.transpose() * r * (2.0 * c);
            h += j.transpose() * j * (2.0 * c);
        } else {
            let Some(px) = proj.project(k, x) else { continue };
            wsum += c;
            sq += c * (px - Vector2::new(kp[0], kp[1])).norm_squared();
        }
    }
    if wsum == 0.0 {
        return Err(Error::Degenerate("no valid keypoint in frame".into()));
    }
    out.loss = lk * sq / wsum;
    out.grad = g * (lk / wsum);
    out.gn = h * (lk / wsum);

    // Box.
    if lb != 0.0 {
        if let Some(target) = obs.box2d {
            let (lbox, gbox) = box_term(frame, k, &proj, &target, want_grad);
            out.loss += lb * lbox;
            out.grad += gbox * lb;
        }
    }
    Ok(out)
}

/// `1 − IoU`, or `1 − GIoU` when the boxes are disjoint. The gradient flows
/// through the extremal projected points.
fn box_term(frame: &CameraFrame, k: &Intrinsics, proj: &Projector, target: &BBox, want_grad: bool) -> (f64, Vector6<f64>) {
    // Extremal point indices: x_min, y_min, x_max, y_max.
    let mut ext_idx = [usize::MAX; 4];
    let mut b = BBox::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (i, x) in frame.box3d.iter().enumerate() {
        let Some(px) = proj.project(k, x) else { continue };
        if px.x < b.x_min {
            b.x_min = px.x;
            ext_idx[0] = i;
        }
        if px.y < b.y_min {
            b.y_min = px.y;
            ext_idx[1] = i;
        }
        if px.x > b.x_max {
            b.x_max = px.x;
            ext_idx[2] = i;
        }
        if px.y > b.y_max {
            b.y_max = px.y;
            ext_idx[3] = i;
        }
    }
    if ext_idx[0] == usize::MAX || !(b.area() > 0.0) || !(target.area() > 0.0) {
        return (1.0, Vector6::zeros());
    }
    let (loss, db) = box_loss_and_grad(&b, target);
    if !want_grad {
        return (loss, Vector6::zeros());
    }
    let mut g = Vector6::zeros();
    for (slot, &i) in ext_idx.iter().enumerate() {
        if db[slot] == 0.0 {
            continue;
        }
        let (_, j) = proj.project_jac(k, &frame.box3d[i]).expect("extremal point is in front");
        let row = if slot % 2 == 0 { 0 } else { 1 };
        g += j.row(row).transpose() * db[slot];
    }
    (loss, g)
}

/// Box loss and its derivative with respect to `(x_min, y_min, x_max, y_max)` of `a`.
pub(crate) fn box_loss_and_grad(a: &BBox, t: &BBox) -> (f64, [f64; 4]) {
    let wa = a.x_max - a.x_min;
    let ha = a.y_max - a.y_min;
    let area_a = wa * ha;
    let area_t = t.area();
    let iw = a.x_max.min(t.x_max) - a.x_min.max(t.x_min);
    let ih = a.y_max.min(t.y_max) - a.y_min.max(t.y_min);
    let da = [-ha, -wa, ha, wa];
    if iw > 0.0 && ih > 0.0 {
        let inter = iw * ih;
        let union = area_a + area_t - inter;
        let di = [
            if a.x_min > t.x_min { -ih } else { 0.0 },
            if a.y_min > t.y_min { -iw } else { 0.0 },
            if a.x_max < t.x_max { ih } else { 0.0 },
            if a.y_max < t.y_max { iw } else { 0.0 },
        ];
        let mut g = [0.0; 4];
        for s in 0..4 {
            let du = da[s] - di[s];
            g[s] = -(di[s] * union - inter * du) / (union * union);
        }
        (1.0 - inter / union, g)
    } else {
        let union = area_a + area_t;
        let cw = a.x_max.max(t.x_max) - a.x_min.min(t.x_min);
        let ch = a.y_max.max(t.y_max) - a.y_min.min(t.y_min);
        let hull = cw * ch;
        let dc = [
            if a.x_min < t.x_min { -ch } else { 0.0 },
            if a.y_min < t.y_min { -cw } else { 0.0 },
            if a.x_max > t.x_max { ch } else { 0.0 },
            if a.y_max > t.y_max { cw } else { 0.0 },
        ];
        // 1 − GIoU = 2 − union / hull when the intersection is empty.
        let mut g = [0.0; 4];
        for s in 0..4 {
            g[s] = -(da[s] * hull - union * dc[s]) / (hull * hull);
        }
        (2.0 - union / hull, g)
    }
}

fn apply(ext: &Extrinsic, d: &Vector6<f64>) -> Extrinsic {
    Extrinsic {
        rotation: ext.rotation + Vector3::new(d[0], d[1], d[2]),
        translation: ext.translation + Vector3::new(d[3], d[4], d[5]),
    }
}

fn params(ext: &Extrinsic) -> Vector6<f64> {
    Vector6::new(ext.rotation.x, ext.rotation.y, ext.rotation.z, ext.translation.x, ext.translation.y, ext.translation.z)
}

fn refine_frame(
    frame: &CameraFrame,
    k: &Intrinsics,
    init: &Extrinsic,
    anchor: Option<&Extrinsic>,
    cfg: &CameraOptConfig,
) -> ExtrinsicResult {
    let eval = |e: &Extrinsic, grad: bool| -> Result<Eval> {
        let mut ev = evaluate(frame, k, e, cfg.lambda_kpt, cfg.lambda_box, grad)?;
        if let (Some(a), true) = (anchor, cfg.temporal_weight > 0.0) {
            let d = params(e) - params(a);
            ev.loss += cfg.temporal_weight * d.norm_squared();
            ev.grad += d * (2.0 * cfg.temporal_weight);
            ev.gn += Matrix6::identity() * (2.0 * cfg.temporal_weight);
        }
        Ok(ev)
    };
    let Ok(mut cur) = eval(init, true) else {
        return ExtrinsicResult {
            extrinsic: *init,
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
            iterations: 0,
            converged: false,
            degenerate: true,
        };
    };
    let initial_loss = cur.loss;
    let mut x = *init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        if cur.grad.amax() < cfg.grad_tol || cur.loss == 0.0 {
            converged = true;
            break;
        }
        // Gauss-Newton preconditioned descent direction, with a plain
        // gradient fallback when the curvature is not positive definite.
        let damp = 1e-9 * cur.gn.trace().abs().max(1e-12);
        let pre = cur.gn + Matrix6::identity() * damp;
        let mut dir = match pre.cholesky() {
            Some(ch) => -ch.solve(&cur.grad),
            None => -cur.grad,
        };
        let mut slope = cur.grad.dot(&dir);
        if !(slope < 0.0) {
            dir = -cur.grad;
            slope = -cur.grad.norm_squared();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = apply(&x, &(dir * step));
            if let Ok(ev) = eval(&cand, false) {
                if ev.loss <= cur.loss + cfg.armijo * step * slope {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= cfg.backtrack;
        }
        iterations += 1;
        let Some(next) = accepted else { break };
        let Ok(ev) = eval(&next, true) else { break };
        let decreased = ev.loss < cur.loss;
        x = next;
        cur = ev;
        if !decreased {
            converged = true;
            break;
        }
    }
    ExtrinsicResult { extrinsic: x.canonical(), initial_loss, final_loss: cur.loss, iterations, converged, degenerate: false }
}

/// Refine one extrinsic per frame. Frames are independent unless a
/// temporal weight is configured, in which case each frame is pulled
/// towards the previous frame's solution and frames run in order.
pub fn optimize_extrinsics(
    frames: &[CameraFrame],
    k: &Intrinsics,
    init: &[Extrinsic],
    cfg: &CameraOptConfig,
) -> Result<Vec<ExtrinsicResult>> {
    k.validate()?;
    if frames.len() != init.len() {
        return Err(Error::Dimension(format!("{} frames but {} initial extrinsics", frames.len(), init.len())));
    }
    if cfg.temporal_weight > 0.0 {
        let mut out: Vec<ExtrinsicResult> = Vec::with_capacity(frames.len());
        for (i, (f, e)) in frames.iter().zip(init).enumerate() {
            let anchor = if i > 0 { Some(out[i - 1].extrinsic) } else { None };
            out.push(refine_frame(f, k, e, anchor.as_ref(), cfg));
        }
        Ok(out)
    } else {
        Ok(frames.par_iter().zip(init.par_iter()).map(|(f, e)| refine_frame(f, k, e, None, cfg)).collect())
    }
}

/// Camera frames for a posed body: joints as keypoints and every skinned
/// vertex as box support.
pub fn frames_from_motion(
    body: &ShapedBody,
    frames: &[BodyParams],
    observations: &[Observation2D],
) -> Result<Vec<CameraFrame>> {
    if frames.len() != observations.len() {
        return Err(Error::Dimension(format!("{} poses but {} observations", frames.len(), observations.len())));
    }
    frames
        .par_iter()
        .zip(observations.par_iter())
        .map(|(p, o)| {
            let pose = body.pose(p)?;
            Ok(CameraFrame { observation: o.clone(), box3d: body.skin(&pose), kpt3d: pose.positions })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic_frame(rng: &mut ChaCha8Rng, k: &Intrinsics, ext: &Extrinsic) -> CameraFrame {
        let pts: Vec<Vector3<f64>> = (0..24)
            .map(|_| Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.0..1.7)))
            .collect();
        let (px, ok) = project(&pts, k, ext);
        let box2d = BBox::bounding(px.iter().zip(&ok).filter(|(_, &v)| v).map(|(p, _)| *p));
        CameraFrame {
            observation: Observation2D {
                kpt2d: px.iter().map(|p| [p.x, p.y]).collect(),
                confidence: ok.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
                box2d,
            },
            kpt3d: pts.clone(),
            box3d: pts,
        }
    }

    fn gt_camera() -> Extrinsic {
        Extrinsic::look_at(&Vector3::new(4.0, -1.0, 1.4), &Vector3::new(0.0, 0.0, 0.9), &Vector3::z()).unwrap()
    }

    #[test]
    fn zero_at_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Intrinsics::default();
        let e = gt_camera();
        let f = synthetic_frame(&mut rng, &k, &e);
        assert!(loss_cam(&f, &k, &e, 1.0, 100.0).unwrap() < 1e-9);
    }

    #[test]
    fn two_pixel_offset_costs_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Intrinsics::default();
        let e = gt_camera();
        let mut f = synthetic_frame(&mut rng, &k, &e);
        for kp in f.observation.kpt2d.iter_mut() {
            kp[0] += 2.0;
        }
        assert!((loss_cam(&f, &k, &e, 1.0, 0.0).unwrap() - 4.0).abs() < 1e-9);
        // λ_kpt = 0 with a matching box leaves nothing.
        assert_eq!(loss_cam(&f, &k, &e, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn no_visible_keypoint_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Intrinsics::default();
        let mut f = synthetic_frame(&mut rng, &k, &gt_camera());
        f.observation.confidence.iter_mut().for_each(|c| *c = 0.0);
        assert!(loss_cam(&f, &k, &gt_camera(), 1.0, 1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = Intrinsics::default();
        let e = gt_camera();
        let f = synthetic_frame(&mut rng, &k, &e);
        let pert = apply(&e, &Vector6::new(0.01, -0.02, 0.015, 0.05, -0.03, 0.02));
        let (_, g) = loss_cam_with_grad(&f, &k, &pert, 1.0, 100.0).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut d = Vector6::zeros();
            d[i] = h;
            let lp = loss_cam(&f, &k, &apply(&pert, &d), 1.0, 100.0).unwrap();
            let lm = loss_cam(&f, &k, &apply(&pert, &(-d)), 1.0, 100.0).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1.0), "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn box_gradient_matches_finite_differences() {
        let t = BBox::new(0.0, 0.0, 10.0, 8.0);
        for a in [BBox::new(2.0, 1.0, 12.0, 7.0), BBox::new(13.0, 9.0, 20.0, 15.0), BBox::new(-3.0, 2.0, 4.0, 5.0)] {
            let (_, g) = box_loss_and_grad(&a, &t);
            let coords = [a.x_min, a.y_min, a.x_max, a.y_max];
            for s in 0..4 {
                let mut p = coords;
                let mut m = coords;
                p[s] += 1e-6;
                m[s] -= 1e-6;
                let lp = box_loss_and_grad(&BBox::new(p[0], p[1], p[2], p[3]), &t).0;
                let lm = box_loss_and_grad(&BBox::new(m[0], m[1], m[2], m[3]), &t).0;
                assert!(((lp - lm) / 2e-6 - g[s]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn recovers_perturbed_extrinsic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = Intrinsics::default();
        let e = gt_camera();
        let f = synthetic_frame(&mut rng, &k, &e);
        let init = apply(&e, &Vector6::new(0.02, -0.02, 0.01, 0.04, 0.03, -0.02));
        let res = optimize_extrinsics(std::slice::from_ref(&f), &k, &[init], &CameraOptConfig::default()).unwrap();
        let r = res[0];
        assert!(r.final_loss <= r.initial_loss);
        assert!((r.extrinsic.translation - e.translation).norm() < 1e-6);
        assert!((r.extrinsic.rotation - e.rotation).norm() < 1e-6);
    }

    #[test]
    fn init_at_truth_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = Intrinsics::default();
        let e = gt_camera();
        let f = synthetic_frame(&mut rng, &k, &e);
        let r = optimize_extrinsics(std::slice::from_ref(&f), &k, &[e], &CameraOptConfig::default()).unwrap()[0];
        assert!(r.iterations <= 1);
        assert!((r.extrinsic.rotation - e.rotation).norm() < 1e-12);
        assert!((r.extrinsic.translation - e.translation).norm() < 1e-12);
    }

    #[test]
    fn invisible_subject_passes_init_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = Intrinsics::default();
        let e = gt_camera();
        let mut f = synthetic_frame(&mut rng, &k, &e);
        f.observation.confidence.iter_mut().for_each(|c| *c = 0.0);
        f.observation.box2d = None;
        let r = optimize_extrinsics(std::slice::from_ref(&f), &k, &[e], &CameraOptConfig::default()).unwrap()[0];
        assert!(r.degenerate);
        assert_eq!(r.extrinsic, e);
    }
}
