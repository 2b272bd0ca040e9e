//! Kinematic gait synthesis along a polyline path.
//!
//! Feet follow an explicit footstep schedule: during stance a foot is locked
//! flat at its footprint, during swing it travels to the next footprint on a
//! cosine-eased arc. Legs are solved with analytic two-link inverse
//! kinematics so stance feet stay exactly in place; the upper body gets
//! sinusoidal arm swing and a small counter-rotation of the spine.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::params::{BodyParams, MotionSequence, SHAPE_DIM};
use crate::body::rotation::{log_map, rot_x, rot_y, rot_z, slerp};
use crate::body::tree::*;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Walk,
    Run,
    JumpBracketed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub kind: MotionKind,
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    /// Ground-plane path, meters. The subject starts at the first waypoint.
    pub waypoints: Vec<[f64; 2]>,
    /// Jumps in each bracket of a jump-bracketed sequence.
    #[serde(default = "default_jumps")]
    pub jumps_per_bracket: usize,
    /// Overrides the gait's nominal speed, m/s.
    #[serde(default)]
    pub speed: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: Vec<f64>,
}

fn default_rate() -> f64 {
    20.0
}

fn default_jumps() -> usize {
    1
}

fn default_beta() -> Vec<f64> {
    vec![0.0; SHAPE_DIM]
}

impl MotionSpec {
    pub fn new(kind: MotionKind, duration_s: f64, rate_hz: f64, waypoints: Vec<[f64; 2]>) -> Self {
        Self { kind, duration_s, rate_hz, waypoints, jumps_per_bracket: 1, speed: None, beta: default_beta() }
    }
}

/// Output of [`synth_motion`] with the generator's own ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMotion {
    pub sequence: MotionSequence,
    /// Per frame, per foot (left, right): the foot stayed in one stance phase
    /// over the interval ending at this frame (frame 0 uses the interval to
    /// frame 1).
    pub stance: Vec<[bool; 2]>,
    /// Apex times of the injected jumps, seconds.
    pub jump_apex_times: Vec<f64>,
}

pub(crate) struct GaitParams {
    pub speed: f64,
    pub period: f64,
    pub duty: f64,
    pub swing_height: f64,
    pub bob: f64,
    pub arm_swing: f64,
    pub elbow_bend: f64,
}

impl GaitParams {
    fn for_kind(kind: MotionKind) -> Self {
        match kind {
            MotionKind::Run => Self {
                speed: 2.5,
                period: 0.7,
                duty: 0.35,
                swing_height: 0.12,
                bob: 0.03,
                arm_swing: 0.6,
                elbow_bend: 1.2,
            },
            MotionKind::Walk | MotionKind::JumpBracketed => Self {
                speed: 1.0,
                period: 1.1,
                duty: 0.6,
                swing_height: 0.08,
                bob: 0.012,
                arm_swing: 0.3,
                elbow_bend: 0.3,
            },
        }
    }
}

const STAND_S: f64 = 0.5;
const JUMP_S: f64 = 0.6;
const JUMP_GAP_S: f64 = 0.4;
const JUMP_HEIGHT: f64 = 0.35;
const BLEND_S: f64 = 0.4;

/// Piecewise-linear path with arc-length parameterization, extended
/// linearly beyond both ends.
pub(crate) struct Path {
    points: Vec<Vector2<f64>>,
    cum: Vec<f64>,
}

impl Path {
    pub fn new(waypoints: &[[f64; 2]]) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 waypoints, got {}", waypoints.len())));
        }
        let points: Vec<Vector2<f64>> = waypoints.iter().map(|w| Vector2::new(w[0], w[1])).collect();
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidInput("waypoints must be finite".into()));
        }
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            let len = (w[1] - w[0]).norm();
            if len < 1e-9 {
                return Err(Error::InvalidInput("consecutive waypoints coincide".into()));
            }
            cum.push(cum.last().unwrap() + len);
        }
        Ok(Self { points, cum })
    }

    pub fn point(&self, s: f64) -> Vector2<f64> {
        let n = self.points.len();
        let seg = if s <= 0.0 { 0 } else { self.cum.partition_point(|&c| c <= s).saturating_sub(1).min(n - 2) };
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let len = self.cum[seg + 1] - self.cum[seg];
        a + (b - a) * ((s - self.cum[seg]) / len)
    }

    /// Heading from a centered chord, continuous across corners.
    pub fn heading(&self, s: f64) -> f64 {
        let d = self.point(s + 0.3) - self.point(s - 0.3);
        d.y.atan2(d.x)
    }
}

fn lateral(yaw: f64) -> Vector2<f64> {
    Vector2::new(-yaw.sin(), yaw.cos())
}

fn unwrap_near(angle: f64, reference: f64) -> f64 {
    let mut a = angle;
    while a - reference > PI {
        a -= 2.0 * PI;
    }
    while a - reference < -PI {
        a += 2.0 * PI;
    }
    a
}

/// Where a foot is and whether it is planted.
#[derive(Debug, Clone, Copy)]
struct FootState {
    ankle: Vector3<f64>,
    yaw: f64,
    /// Planted foot identifier; `None` while airborne.
    contact: Option<u64>,
}

/// Leg geometry taken from the (shaped) rest skeleton.
struct Skeleton {
    rest: Vec<Vector3<f64>>,
    offsets: Vec<Vector3<f64>>,
    tree: KinematicTree,
}

impl Skeleton {
    fn new(tree: &KinematicTree) -> Self {
        Self { rest: tree.rest_joints(), offsets: tree.rest_offsets().to_vec(), tree: tree.clone() }
    }

    fn hip_width(&self) -> f64 {
        0.5 * (self.rest[LEFT_HIP].y - self.rest[RIGHT_HIP].y)
    }

    fn ankle_height(&self) -> f64 {
        0.5 * (self.rest[LEFT_ANKLE].z + self.rest[RIGHT_ANKLE].z)
    }

    fn leg_length(&self) -> f64 {
        let l = |knee: usize, ankle: usize| self.offsets[knee].norm() + self.offsets[ankle].norm();
        l(LEFT_KNEE, LEFT_ANKLE).min(l(RIGHT_KNEE, RIGHT_ANKLE))
    }

    /// Pelvis height that keeps the hip-to-ankle distance at `reach` of the
    /// leg length for a horizontal foot excursion `excursion`.
    fn pelvis_height(&self, excursion: f64, reach: f64) -> f64 {
        let l = reach * self.leg_length();
        let vertical = (l * l - excursion * excursion).max(0.0).sqrt();
        let hip_drop = self.rest[PELVIS].z - 0.5 * (self.rest[LEFT_HIP].z + self.rest[RIGHT_HIP].z);
        self.ankle_height() + vertical + hip_drop
    }
}

/// Pose a full body frame from pelvis placement, feet targets and upper-body phase.
struct FrameTargets {
    pelvis: Vector3<f64>,
    yaw: f64,
    feet: [FootState; 2],
    /// Arm swing angle of the left arm, radians (right arm mirrors it).
    arm_swing: f64,
    elbow_bend: f64,
    spine_twist: f64,
}

fn solve_leg(
    sk: &Skeleton,
    pelvis_rot: &Matrix3<f64>,
    hip_world: &Vector3<f64>,
    target: &FootState,
    joints: (usize, usize, usize),
    theta: &mut [Vector3<f64>],
) {
    let (hip, knee, ankle) = joints;
    let o_k = sk.offsets[knee];
    let o_a = sk.offsets[ankle];
    let reach = |kappa: f64| (o_k + rot_y(kappa) * o_a).norm();
    let to_target = target.ankle - hip_world;
    let d = to_target.norm();
    let kappa = if d >= reach(0.0) {
        0.0
    } else {
        // Knee extension shrinks monotonically with flexion on [0, 2.5].
        let (mut lo, mut hi) = (0.0, 2.5);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if reach(mid) > d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let v_local = o_k + rot_y(kappa) * o_a;
    let want = pelvis_rot.transpose() * to_target;
    let r_hip = Rotation3::rotation_between(&v_local, &want).map(|r| *r.matrix()).unwrap_or_else(Matrix3::identity);
    theta[hip] = log_map(&r_hip);
    theta[knee] = Vector3::new(0.0, kappa, 0.0);
    let g_shin = pelvis_rot * r_hip * rot_y(kappa);
    theta[ankle] = log_map(&(g_shin.transpose() * rot_z(target.yaw)));
}

fn pose_frame(sk: &Skeleton, t: &FrameTargets, beta: &[f64]) -> BodyParams {
    let mut p = BodyParams::zero();
    p.beta = beta.to_vec();
    let g_pelvis = rot_z(t.yaw);
    p.theta[PELVIS] = log_map(&g_pelvis);
    p.trans = t.pelvis - sk.rest[PELVIS];
    for (side, joints) in [(0, (LEFT_HIP, LEFT_KNEE, LEFT_ANKLE)), (1, (RIGHT_HIP, RIGHT_KNEE, RIGHT_ANKLE))] {
        let hip_world = t.pelvis + g_pelvis * sk.offsets[joints.0];
        solve_leg(sk, &g_pelvis, &hip_world, &t.feet[side], joints, &mut p.theta);
    }
    let twist = t.spine_twist / 3.0;
    for j in [SPINE1, SPINE2, SPINE3] {
        p.theta[j] = Vector3::new(0.0, 0.0, twist);
    }
    let hang = 80f64.to_radians();
    p.theta[LEFT_SHOULDER] = log_map(&(rot_y(t.arm_swing) * rot_x(-hang)));
    p.theta[RIGHT_SHOULDER] = log_map(&(rot_y(-t.arm_swing) * rot_x(hang)));
    p.theta[LEFT_ELBOW] = log_map(&rot_z(-t.elbow_bend));
    p.theta[RIGHT_ELBOW] = log_map(&rot_z(t.elbow_bend));
    let _ = &sk.tree;
    p
}

/// Cyclic gait state at walking time `tau`.
struct Gait<'a> {
    sk: &'a Skeleton,
    path: &'a Path,
    g: GaitParams,
    pelvis_base: f64,
}

const FOOT_OFFSET: [f64; 2] = [0.0, 0.5];

impl Gait<'_> {
    fn footprint(&self, foot: usize, step: i64) -> (Vector3<f64>, f64) {
        let tau_mid = (step as f64 - FOOT_OFFSET[foot] + 0.5 * self.g.duty) * self.g.period;
        let s = self.g.speed * tau_mid;
        let yaw = self.path.heading(s);
        let side = if foot == 0 { 1.0 } else { -1.0 };
        let xy = self.path.point(s) + lateral(yaw) * (side * self.sk.hip_width());
        (Vector3::new(xy.x, xy.y, self.sk.ankle_height()), yaw)
    }

    fn foot(&self, foot: usize, tau: f64) -> FootState {
        let x = tau / self.g.period + FOOT_OFFSET[foot];
        let step = x.floor() as i64;
        let phase = x - x.floor();
        let (a, yaw_a) = self.footprint(foot, step);
        if phase < self.g.duty {
            // Footprint ids are unique per (foot, step).
            let id = ((step + (1 << 40)) as u64) * 2 + foot as u64;
            return FootState { ankle: a, yaw: yaw_a, contact: Some(id) };
        }
        let (b, yaw_b) = self.footprint(foot, step + 1);
        let u = (phase - self.g.duty) / (1.0 - self.g.duty);
        let e = 0.5 * (1.0 - (PI * u).cos());
        let mut ankle = a + (b - a) * e;
        ankle.z += self.g.swing_height * (PI * u).sin();
        let yaw_b = unwrap_near(yaw_b, yaw_a);
        FootState { ankle, yaw: yaw_a + (yaw_b - yaw_a) * e, contact: None }
    }

    fn targets(&self, tau: f64) -> FrameTargets {
        let s = self.g.speed * tau;
        let xy = self.path.point(s);
        let phase = tau / self.g.period;
        let bob = self.g.bob * (4.0 * PI * (phase - 0.5 * self.g.duty)).cos();
        let swing = self.g.arm_swing * (2.0 * PI * phase).sin();
        FrameTargets {
            pelvis: Vector3::new(xy.x, xy.y, self.pelvis_base + bob),
            yaw: self.path.heading(s),
            feet: [self.foot(0, tau), self.foot(1, tau)],
            arm_swing: swing,
            elbow_bend: self.g.elbow_bend,
            spine_twist: -0.3 * swing,
        }
    }
}

fn standing(sk: &Skeleton, path: &Path, s: f64, height: f64, lift: f64, id: u64) -> FrameTargets {
    let yaw = path.heading(s);
    let xy = path.point(s);
    let foot = |side: f64, k: u64| {
        let p = xy + lateral(yaw) * (side * sk.hip_width());
        FootState {
            ankle: Vector3::new(p.x, p.y, sk.ankle_height() + lift),
            yaw,
            contact: (lift == 0.0).then_some(id * 2 + k),
        }
    };
    FrameTargets {
        pelvis: Vector3::new(xy.x, xy.y, height + lift),
        yaw,
        feet: [foot(1.0, 0), foot(-1.0, 1)],
        arm_swing: 0.0,
        elbow_bend: 0.15,
        spine_twist: 0.0,
    }
}

fn blend_params(a: &BodyParams, b: &BodyParams, w: f64) -> BodyParams {
    let mut out = a.clone();
    for j in 0..a.theta.len() {
        out.theta[j] = slerp(&a.theta[j], &b.theta[j], w);
    }
    out.trans = a.trans + (b.trans - a.trans) * w;
    out
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Generate a deterministic motion sequence with its stance ground truth.
///
/// `tree` must be the skeleton of the body that will be skinned (for a
/// shaped body, the rest joints after applying β).
pub fn synth_motion(spec: &MotionSpec, tree: &KinematicTree) -> Result<SynthMotion> {
    if !(spec.duration_s > 0.0) || !spec.duration_s.is_finite() {
        return Err(Error::InvalidInput(format!("duration must be positive, got {}", spec.duration_s)));
    }
    if !(spec.rate_hz > 0.0) || !spec.rate_hz.is_finite() {
        return Err(Error::InvalidInput(format!("rate must be positive, got {}", spec.rate_hz)));
    }
    if spec.beta.len() != SHAPE_DIM {
        return Err(Error::Dimension(format!("beta has {} entries, expected {SHAPE_DIM}", spec.beta.len())));
    }
    let path = Path::new(&spec.waypoints)?;
    let sk = Skeleton::new(tree);
    let mut g = GaitParams::for_kind(spec.kind);
    if let Some(v) = spec.speed {
        if !(v > 0.0) {
            return Err(Error::InvalidInput(format!("speed must be positive, got {v}")));
        }
        g.speed = v;
    }
    let excursion = 0.5 * g.speed * g.duty * g.period;
    let pelvis_base = sk.pelvis_height(excursion, 0.985) - g.bob;
    let stand_height = sk.pelvis_height(0.0, 0.99);
    let gait = Gait { sk: &sk, path: &path, g, pelvis_base };

    let n = (spec.duration_s * spec.rate_hz).round() as usize;
    let times: Vec<f64> = (0..n).map(|i| i as f64 / spec.rate_hz).collect();

    let (bracket, jumps) = if spec.kind == MotionKind::JumpBracketed {
        if spec.jumps_per_bracket == 0 {
            return Err(Error::InvalidInput("jumps_per_bracket must be at least 1".into()));
        }
        let j = spec.jumps_per_bracket as f64;
        let b = 2.0 * STAND_S + j * JUMP_S + (j - 1.0) * JUMP_GAP_S;
        if spec.duration_s < 2.0 * b + 1.0 {
            return Err(Error::InvalidInput(format!(
                "jump-bracketed motion needs at least {:.2} s, got {}",
                2.0 * b + 1.0,
                spec.duration_s
            )));
        }
        (b, spec.jumps_per_bracket)
    } else {
        (0.0, 0)
    };
    let walk_end = spec.duration_s - bracket;
    let walk_len = walk_end - bracket;

    // Jump windows [start, end) with apex in the middle.
    let mut jump_windows = Vec::new();
    for k in 0..jumps {
        let start = STAND_S + k as f64 * (JUMP_S + JUMP_GAP_S);
        jump_windows.push((start, 0));
        jump_windows.push((walk_end + start, 1));
    }
    jump_windows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let jump_apex_times: Vec<f64> = jump_windows.iter().map(|(s, _)| s + 0.5 * JUMP_S).collect();

    let mut frames = Vec::with_capacity(n);
    let mut contacts = Vec::with_capacity(n);
    for &t in &times {
        let targets = if spec.kind != MotionKind::JumpBracketed {
            gait.targets(t)
        } else if t < bracket || t >= walk_end {
            let (s, seg) = if t < bracket { (0.0, 0u64) } else { (g_speed_len(&gait, walk_len), 1u64) };
            let lift = jump_windows
                .iter()
                .find(|(start, _)| t >= *start && t < start + JUMP_S)
                .map(|(start, _)| JUMP_HEIGHT * (PI * (t - start) / JUMP_S).sin().powi(2))
                .unwrap_or(0.0);
            // Separate contact ids before and after each jump.
            let before = jump_windows.iter().filter(|(start, _)| t >= start + JUMP_S).count() as u64;
            standing(&sk, &path, s, stand_height, lift, (1 << 50) + 16 * seg + before)
        } else {
            gait.targets(t - bracket)
        };
        let mut params = pose_frame(&sk, &targets, &spec.beta);
        let mut feet_contact = [targets.feet[0].contact, targets.feet[1].contact];
        if spec.kind == MotionKind::JumpBracketed && t >= bracket && t < walk_end {
            // Ease in and out of the walk from the standing pose.
            let tau = t - bracket;
            let w_in = smoothstep(tau / BLEND_S);
            let w_out = smoothstep((walk_len - tau) / BLEND_S);
            let w = w_in.min(w_out);
            if w < 1.0 {
                let s = if tau < 0.5 * walk_len { 0.0 } else { g_speed_len(&gait, walk_len) };
                let stand = pose_frame(&sk, &standing(&sk, &path, s, stand_height, 0.0, 0), &spec.beta);
                params = blend_params(&stand, &params, w);
                feet_contact = [None, None];
            }
        }
        frames.push(params);
        contacts.push(feet_contact);
    }

    let stance = (0..n)
        .map(|i| {
            let (a, b) = if i == 0 { (0, 1.min(n - 1)) } else { (i - 1, i) };
            [0, 1].map(|f| matches!((contacts[a][f], contacts[b][f]), (Some(x), Some(y)) if x == y))
        })
        .collect();

    Ok(SynthMotion {
        sequence: MotionSequence { frames, rate_hz: spec.rate_hz, frame_times: times },
        stance,
        jump_apex_times,
    })
}

fn g_speed_len(gait: &Gait, walk_len: f64) -> f64 {
    gait.g.speed * walk_len
}
