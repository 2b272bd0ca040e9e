//! The motion objective: smoothness of translation, joints and orientation,
//! scene contact of stable feet, a prior towards the inertial poses, and a
//! viewpoint-aware mesh-to-points term.
//!
//! [`Objective`] evaluates every term and its analytic gradient for a window
//! of frames; the free functions are thin wrappers for single terms.

mod chamfer;
mod contact;
mod terms;
mod visibility;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use chamfer::{chamfer_one_sided, loss_m2p, M2pLoss, PointIndex};
pub use contact::detect_stable_feet;
pub use visibility::{visible_sample, SurfaceSample, VisibilityOptions, VisibleSample};

use crate::body::kinematics::{pose_backward, ParamGrad, Pose, ShapedBody};
use crate::body::params::BodyParams;
use crate::body::rotation::rodrigues_with_jacobian;
use crate::body::tree::KinematicTree;
use crate::error::{Error, Result};
use crate::scene::SceneMesh;
use crate::sim::{LidarModel, PointCloudFrame, SensorPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub trans: f64,
    pub orit: f64,
    pub jts: f64,
    pub sc: f64,
    pub pri: f64,
    pub m2p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { trans: 1.0, orit: 1.0, jts: 1.0, sc: 10.0, pri: 0.1, m2p: 100.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { trans: 0.0, orit: 0.0, jts: 0.0, sc: 0.0, pri: 0.0, m2p: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.trans, self.orit, self.jts, self.sc, self.pri, self.m2p];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Foot speed below which a foot counts as planted, m/s.
    pub stable_threshold_mps: f64,
    /// Penalize the first difference of every joint's axis-angle instead of
    /// only the pelvis orientation.
    pub orit_all_joints: bool,
    /// Restrict mesh sampling to the sensor's field of view.
    pub fov_cull: bool,
    /// Add a centroid sample for visible faces that no beam strikes. Those
    /// points have no counterpart in a real sweep, so this is off by default.
    pub face_fallback: bool,
    /// Sensor whose resolution sets the sampling density.
    pub lidar: LidarModel,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            stable_threshold_mps: 0.1,
            orit_all_joints: false,
            fov_cull: true,
            face_fallback: false,
            lidar: LidarModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub trans: f64,
    pub jts: f64,
    pub orit: f64,
    pub contact: f64,
    pub prior: f64,
    pub m2p: f64,
}

impl LossBreakdown {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.trans * self.trans + w.orit * self.orit + w.jts * self.jts + w.sc * self.contact + w.pri * self.prior + w.m2p * self.m2p
    }
}

/// A segment of consecutive frames with everything the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionWindow {
    /// The free variables.
    pub params: Vec<BodyParams>,
    /// Frozen world-aligned inertial poses.
    pub init_theta: Vec<Vec<Vector3<f64>>>,
    /// Body-labeled scan points per frame, world frame.
    pub observations: Vec<Vec<Vector3<f64>>>,
    pub sensors: Vec<SensorPose>,
    pub rate_hz: f64,
    /// Frozen stable-foot labels (left, right).
    pub stable: Vec<[bool; 2]>,
}

impl MotionWindow {
    /// A window without observations or planted feet; the prior anchors to
    /// the given poses.
    pub fn new(params: Vec<BodyParams>, rate_hz: f64) -> Self {
        let k = params.len();
        Self {
            init_theta: params.iter().map(|p| p.theta.clone()).collect(),
            observations: vec![Vec::new(); k],
            sensors: vec![SensorPose { origin: Vector3::zeros(), rotation: Vector3::zeros() }; k],
            stable: vec![[false; 2]; k],
            params,
            rate_hz,
        }
    }

    pub fn with_clouds(mut self, clouds: &[PointCloudFrame]) -> Result<Self> {
        if clouds.len() != self.len() {
            return Err(Error::Dimension(format!("{} clouds for {} frames", clouds.len(), self.len())));
        }
        self.observations = clouds.iter().map(|c| c.body_points()).collect();
        self.sensors = clouds.iter().map(|c| c.sensor_pose()).collect();
        Ok(self)
    }

    pub fn with_stable(mut self, stable: Vec<[bool; 2]>) -> Result<Self> {
        if stable.len() != self.len() {
            return Err(Error::Dimension(format!("{} stable labels for {} frames", stable.len(), self.len())));
        }
        self.stable = stable;
        Ok(self)
    }

    pub fn with_init(mut self, init_theta: Vec<Vec<Vector3<f64>>>) -> Result<Self> {
        if init_theta.len() != self.len() {
            return Err(Error::Dimension(format!("{} initial poses for {} frames", init_theta.len(), self.len())));
        }
        self.init_theta = init_theta;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.len();
        terms::need(k, 3)?;
        for (name, n) in [
            ("init_theta", self.init_theta.len()),
            ("observations", self.observations.len()),
            ("sensors", self.sensors.len()),
            ("stable", self.stable.len()),
        ] {
            if n != k {
                return Err(Error::Dimension(format!("window has {k} frames but {n} entries in {name}")));
            }
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!("rate must be positive, got {}", self.rate_hz)));
        }
        for p in &self.params {
            p.validate()?;
        }
        Ok(())
    }
}

pub fn loss_trans(window: &MotionWindow) -> Result<f64> {
    terms::trans_term(&window.params, 1.0, None)
}

pub fn loss_orit(window: &MotionWindow) -> Result<f64> {
    terms::orit_term(&window.params, false, 1.0, None)
}

/// Orientation smoothness over every joint instead of the pelvis only.
pub fn loss_orit_all_joints(window: &MotionWindow) -> Result<f64> {
    terms::orit_term(&window.params, true, 1.0, None)
}

pub fn loss_jts(window: &MotionWindow, tree: &KinematicTree) -> Result<f64> {
    terms::need(window.len(), 3)?;
    let rel: Vec<Vec<f64>> = window
        .params
        .iter()
        .map(|p| crate::body::kinematics::relative_joints(p, tree))
        .collect::<Result<_>>()?;
    Ok(terms::second_difference_rows(&rel, 1.0, None))
}

/// Squared deviation from the initial poses, averaged over frames. The
/// pelvis orientation is compared through its rotation matrix
/// (½‖R − R₀‖², two times one minus the cosine of the angle between them)
/// so the term does not depend on the world frame; the body-local joints are
/// compared directly.
pub fn loss_prior(window: &MotionWindow) -> Result<f64> {
    prior_with_grad(&window.params, &window.init_theta, 1.0, None)
}

fn prior_with_grad(
    params: &[BodyParams],
    init: &[Vec<Vector3<f64>>],
    weight: f64,
    grad: Option<&mut [Vec<Vector3<f64>>]>,
) -> Result<f64> {
    if init.len() != params.len() {
        return Err(Error::Dimension(format!("{} initial poses for {} frames", init.len(), params.len())));
    }
    let mut stripped: Vec<BodyParams> = params.to_vec();
    let mut init_stripped: Vec<Vec<Vector3<f64>>> = init.to_vec();
    for (p, i) in stripped.iter_mut().zip(init_stripped.iter_mut()) {
        if p.theta.is_empty() || i.is_empty() {
            return Err(Error::Dimension("empty pose".into()));
        }
        p.theta[0] = Vector3::zeros();
        i[0] = Vector3::zeros();
    }
    let mut g = grad;
    let mut total = terms::prior_term(&stripped, &init_stripped, weight, g.as_deref_mut())?;
    let k = params.len().max(1) as f64;
    for (f, (p, i)) in params.iter().zip(init).enumerate() {
        let (r, jac) = rodrigues_with_jacobian(&p.theta[0]);
        let r0 = crate::body::rotation::rodrigues(&i[0]);
        let d: Matrix3<f64> = r - r0;
        total += 0.5 * d.norm_squared() / k;
        if let Some(g) = g.as_deref_mut() {
            let s = weight / k;
            g[f][0] += Vector3::new(d.component_mul(&jac[0]).sum(), d.component_mul(&jac[1]).sum(), d.component_mul(&jac[2]).sum()) * s;
        }
    }
    Ok(total)
}

/// Mean squared foot-to-scene distance over the stable (frame, foot) pairs.
pub fn loss_contact(window: &MotionWindow, body: &ShapedBody, stable: &[[bool; 2]], scene: &SceneMesh) -> Result<f64> {
    if stable.len() != window.len() {
        return Err(Error::Dimension(format!("{} stable labels for {} frames", stable.len(), window.len())));
    }
    let pairs = stable.iter().flatten().filter(|s| **s).count();
    if pairs == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, s) in window.params.iter().zip(stable) {
        let pose = body.pose(p)?;
        for f in 0..2 {
            if s[f] {
                let verts: Vec<_> = body.foot_vertex_sets[f].iter().map(|&v| body.skin_vertex(&pose, v)).collect();
                total += contact::foot_contact(scene, &verts, None)?;
            }
        }
    }
    Ok(total / pairs as f64)
}

/// A visible-surface sample paired with the observed point it was matched to
/// when the layout was built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutSample {
    pub sample: SurfaceSample,
    pub target: Vector3<f64>,
}

/// Per-frame sample placement and correspondences; frames without
/// observations carry none. Holding the matches fixed makes the mesh-to-point
/// term smooth between layouts. At the params the layout was built from it
/// equals the nearest-neighbor Chamfer value, and elsewhere it bounds it from
/// above.
pub type SampleLayout = Vec<Vec<LayoutSample>>;

struct FrameOut {
    pose: Pose,
    contact: f64,
    m2p: f64,
    vert_grad: Vec<(usize, Vector3<f64>)>,
}

/// The full objective over one window, with the per-frame nearest-neighbor
/// indices built once.
pub struct Objective<'a> {
    pub window: &'a MotionWindow,
    pub body: &'a ShapedBody,
    pub scene: &'a SceneMesh,
    pub config: &'a LossConfig,
    index: Vec<PointIndex>,
    stable_pairs: usize,
}

impl<'a> Objective<'a> {
    pub fn new(window: &'a MotionWindow, body: &'a ShapedBody, scene: &'a SceneMesh, config: &'a LossConfig) -> Result<Self> {
        window.validate()?;
        config.weights.validate()?;
        let stable_pairs = window.stable.iter().flatten().filter(|s| **s).count();
        if stable_pairs > 0 && scene.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let index = window.observations.iter().map(|o| PointIndex::new(o)).collect();
        Ok(Self { window, body, scene, config, index, stable_pairs })
    }

    /// Visible-surface samples for the given motion, each matched to its
    /// nearest observed point.
    pub fn layout(&self, params: &[BodyParams]) -> Result<SampleLayout> {
        let opts = VisibilityOptions { fov_cull: self.config.fov_cull, face_fallback: self.config.face_fallback };
        (0..params.len())
            .into_par_iter()
            .map(|i| {
                if self.index[i].is_empty() {
                    return Ok(Vec::new());
                }
                let pose = self.body.pose(&params[i])?;
                let verts = self.body.skin(&pose);
                let vis = visible_sample(&verts, &self.body.faces, &self.window.sensors[i], &self.config.lidar, opts)?;
                Ok(vis
                    .samples
                    .iter()
                    .zip(&vis.points)
                    .map(|(s, p)| LayoutSample { sample: *s, target: self.index[i].nearest(p).expect("non-empty index").0 })
                    .collect())
            })
            .collect()
    }

    /// Loss breakdown with sampling placed at `params` itself.
    pub fn loss(&self, params: &[BodyParams]) -> Result<LossBreakdown> {
        let layout = self.layout(params)?;
        Ok(self.evaluate(params, &layout, false)?.0)
    }

    /// Loss and (optionally) gradient for a fixed sample layout.
    pub fn evaluate(
        &self,
        params: &[BodyParams],
        layout: &SampleLayout,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<Vec<ParamGrad>>)> {
        let k = self.window.len();
        if params.len() != k || layout.len() != k {
            return Err(Error::Dimension(format!("expected {k} frames, got {} params and {} layouts", params.len(), layout.len())));
        }
        let w = &self.config.weights;
        let body = self.body;
        let contact_norm = self.stable_pairs.max(1) as f64;

        let frames: Vec<FrameOut> = (0..k)
            .into_par_iter()
            .map(|i| -> Result<FrameOut> {
                let pose = body.pose(&params[i])?;
                let mut vert_grad = Vec::new();
                let mut contact = 0.0;
                for f in 0..2 {
                    if !self.window.stable[i][f] {
                        continue;
                    }
                    let ids = &body.foot_vertex_sets[f];
                    let verts: Vec<_> = ids.iter().map(|&v| body.skin_vertex(&pose, v)).collect();
                    let mut g = Vec::new();
                    contact += contact::foot_contact(self.scene, &verts, want_grad.then_some(&mut g))?;
                    let s = w.sc / contact_norm;
                    vert_grad.extend(ids.iter().zip(g).map(|(&v, gv)| (v, gv * s)));
                }
                let mut m2p = 0.0;
                let samples = &layout[i];
                if !samples.is_empty() && !self.index[i].is_empty() {
                    let verts = body.skin(&pose);
                    let scale = 2.0 * w.m2p / (samples.len() as f64 * k as f64);
                    let mut sum = 0.0;
                    for ls in samples {
                        let s = &ls.sample;
                        let p = visibility::sample_point(&verts, &body.faces, s);
                        let q = ls.target;
                        sum += (p - q).norm_squared();
                        if want_grad {
                            let g = (p - q) * scale;
                            let face = body.faces[s.face];
                            for c in 0..3 {
                                vert_grad.push((face[c], g * s.bary[c]));
                            }
                        }
                    }
                    m2p = sum / samples.len() as f64;
                }
                Ok(FrameOut { pose, contact, m2p, vert_grad })
            })
            .collect::<Result<_>>()?;

        let rel: Vec<Vec<f64>> =
            frames.iter().map(|f| crate::body::kinematics::relative_from_positions(&f.pose.positions)).collect();
        let mut rel_grad = vec![vec![0.0; rel[0].len()]; k];
        let jts = terms::second_difference_rows(&rel, w.jts, want_grad.then_some(&mut rel_grad[..]));

        let mut theta_grad: Vec<Vec<Vector3<f64>>> = vec![vec![Vector3::zeros(); params[0].theta.len()]; k];
        let mut trans_grad = vec![Vector3::zeros(); k];
        let trans = terms::trans_term(params, w.trans, want_grad.then_some(&mut trans_grad[..]))?;
        let orit = terms::orit_term(params, self.config.orit_all_joints, w.orit, want_grad.then_some(&mut theta_grad[..]))?;
        let prior = prior_with_grad(params, &self.window.init_theta, w.pri, want_grad.then_some(&mut theta_grad[..]))?;

        let contact = frames.iter().map(|f| f.contact).sum::<f64>() / contact_norm;
        let m2p = frames.iter().map(|f| f.m2p).sum::<f64>() / k as f64;
        let mut out = LossBreakdown { total: 0.0, trans, jts, orit, contact, prior, m2p };
        out.total = out.weighted_sum(w);
        if !out.total.is_finite() {
            return Err(Error::NonFinite("objective value".into()));
        }
        if !want_grad {
            return Ok((out, None));
        }

        let tree = &body.tree;
        let joints = tree.joint_count();
        let grads: Vec<ParamGrad> = frames
            .par_iter()
            .enumerate()
            .map(|(i, f)| {
                let mut grad_pos = vec![Vector3::zeros(); joints];
                let mut grad_rot = vec![Matrix3::zeros(); joints];
                for (v, g) in &f.vert_grad {
                    body.skin_vertex_backward(*v, g, &mut grad_pos, &mut grad_rot);
                }
                for j in 1..joints {
                    let g = Vector3::new(rel_grad[i][3 * (j - 1)], rel_grad[i][3 * (j - 1) + 1], rel_grad[i][3 * (j - 1) + 2]);
                    grad_pos[j] += g;
                    grad_pos[0] -= g;
                }
                let mut pg = pose_backward(tree, &f.pose, &grad_pos, &mut grad_rot);
                for (a, b) in pg.theta.iter_mut().zip(&theta_grad[i]) {
                    *a += b;
                }
                pg.trans += trans_grad[i];
                pg
            })
            .collect();
        Ok((out, Some(grads)))
    }
}

/// Every term of the objective at the window's current parameters.
pub fn total_loss(window: &MotionWindow, body: &ShapedBody, scene: &SceneMesh, config: &LossConfig) -> Result<LossBreakdown> {
    Objective::new(window, body, scene, config)?.loss(&window.params)
}

#[cfg(test)]
mod tests;
