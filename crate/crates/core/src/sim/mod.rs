//! Synthetic capture: ground-truth motion, LiDAR sweeps from a trailing
//! carrier, drifting inertial estimates and camera detections.

mod drift;
mod gait;
mod lidar;
mod observe;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use drift::{inject_drift, DriftModel};
pub use gait::{synth_motion, MotionKind, MotionSpec, SynthMotion};
pub(crate) use lidar::azimuth_bins_towards;
pub use lidar::{carrier_sensor_pose, lidar_scan, CarrierSpec, LidarModel, PointCloudFrame, PointLabel, SensorPose};
pub use observe::{camera_observe, CameraObservation};

use crate::body::kinematics::ShapedBody;
use crate::body::params::{BodyParams, MotionSequence};
use crate::body::template::{BodyTemplate, TemplateOptions};
use crate::body::tree::KinematicTree;
use crate::camera::{CameraModel, Extrinsic, Intrinsics};
use crate::error::Result;
use crate::scene::{make_test_scene, SceneMesh, SceneSpec};

/// Camera carried next to the LiDAR, aimed at the subject's pelvis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRigSpec {
    pub intrinsics: Intrinsics,
    /// Camera position relative to the LiDAR origin, world axes.
    pub offset: [f64; 3],
}

impl Default for CameraRigSpec {
    fn default() -> Self {
        Self { intrinsics: Intrinsics::default(), offset: [0.0, 0.0, -0.2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub motion: MotionSpec,
    pub scene: SceneSpec,
    pub template: TemplateOptions,
    pub lidar: LidarModel,
    pub carrier: CarrierSpec,
    pub drift: DriftModel,
    pub camera: Option<CameraRigSpec>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            motion: MotionSpec::new(MotionKind::Walk, 10.0, 20.0, vec![[0.0, 0.0], [30.0, 0.0]]),
            scene: SceneSpec::default(),
            template: TemplateOptions::default(),
            lidar: LidarModel::default(),
            carrier: CarrierSpec::default(),
            drift: DriftModel::default(),
            camera: Some(CameraRigSpec::default()),
        }
    }
}

/// Everything the simulator produced for one run.
#[derive(Debug, Clone)]
pub struct SimulatedCapture {
    pub template: BodyTemplate,
    pub body: ShapedBody,
    pub scene: SceneMesh,
    pub ground_truth: MotionSequence,
    pub drifted: MotionSequence,
    pub clouds: Vec<PointCloudFrame>,
    pub stance: Vec<[bool; 2]>,
    pub jump_apex_times: Vec<f64>,
    pub camera: Option<CameraModel>,
    pub observations: Vec<CameraObservation>,
}

/// Heading of the pelvis forward axis in the ground plane.
pub fn pelvis_yaw(params: &BodyParams) -> f64 {
    let f = crate::body::rotation::rodrigues(&params.root_orient()) * Vector3::x();
    f.y.atan2(f.x)
}

/// Run the full simulator. Frames are generated in parallel; every random
/// stream is derived from the drift seed and the frame index.
pub fn simulate(cfg: &SimConfig) -> Result<SimulatedCapture> {
    cfg.lidar.validate()?;
    let template = BodyTemplate::procedural(&cfg.template)?;
    let body = ShapedBody::new(&template, &KinematicTree::smpl(), &cfg.motion.beta)?;
    let scene = make_test_scene(&cfg.scene)?;
    let synth = synth_motion(&cfg.motion, &body.tree)?;
    let gt = synth.sequence;
    let drifted = inject_drift(&gt, &cfg.drift)?;
    let noise_seed = cfg.drift.seed ^ 0x6c69_6461_725f_7365;

    let per_frame: Vec<(PointCloudFrame, Option<(Extrinsic, CameraObservation)>)> = (0..gt.len())
        .into_par_iter()
        .map(|i| {
            let params = &gt.frames[i];
            let pose = body.pose(params)?;
            let verts = body.skin(&pose);
            let sensor = carrier_sensor_pose(&cfg.lidar, &cfg.carrier, &pose.positions[0], pelvis_yaw(params));
            let frame_seed = noise_seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let cloud = lidar_scan(&cfg.lidar, &scene, &verts, &body.faces, &sensor, gt.frame_times[i], frame_seed)?;
            let cam = match &cfg.camera {
                Some(rig) => {
                    let eye = sensor.origin + Vector3::from(rig.offset);
                    let ext = Extrinsic::look_at(&eye, &pose.positions[0], &Vector3::z())?;
                    let obs = camera_observe(&rig.intrinsics, &ext, &pose.positions, &verts)?;
                    Some((ext, obs))
                }
                None => None,
            };
            Ok((cloud, cam))
        })
        .collect::<Result<_>>()?;

    let mut clouds = Vec::with_capacity(per_frame.len());
    let mut extrinsics = Vec::new();
    let mut observations = Vec::new();
    for (cloud, cam) in per_frame {
        clouds.push(cloud);
        if let Some((e, o)) = cam {
            extrinsics.push(e);
            observations.push(o);
        }
    }
    let camera = cfg.camera.as_ref().map(|rig| CameraModel {
        intrinsics: rig.intrinsics,
        extrinsics,
        timestamps: gt.frame_times.clone(),
    });
    Ok(SimulatedCapture {
        template,
        body,
        scene,
        ground_truth: gt,
        drifted,
        clouds,
        stance: synth.stance,
        jump_apex_times: synth.jump_apex_times,
        camera,
        observations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.motion.duration_s = 1.0;
        cfg
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg = short();
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.clouds, b.clouds);
        assert_eq!(a.drifted, b.drifted);
        assert_eq!(a.observations, b.observations);
    }

    #[test]
    fn clouds_see_the_body_and_lie_on_it() {
        let cap = simulate(&short()).unwrap();
        assert_eq!(cap.clouds.len(), 20);
        for (cloud, params) in cap.clouds.iter().zip(&cap.ground_truth.frames) {
            let pts = cloud.body_points();
            assert!(pts.len() > 50, "only {} body points", pts.len());
            let verts = cap.body.skin(&cap.body.pose(params).unwrap());
            let mesh = SceneMesh::new_unchecked(verts, cap.body.faces.clone());
            for p in pts.iter().step_by(7) {
                assert!(mesh.closest_point(p).unwrap().distance < 1e-6);
            }
        }
        let cam = cap.camera.unwrap();
        assert_eq!(cam.extrinsics.len(), 20);
        assert!(cap.observations.iter().all(|o| o.visible.iter().filter(|v| **v).count() > 20));
    }
}
