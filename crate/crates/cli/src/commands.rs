//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use scenemo::body::{BodyParams, BodyTemplate, KinematicTree, MotionSequence, ShapedBody, SHAPE_DIM};
use scenemo::calib::{align_streams, detect_peaks, trajectory_align, MotionStream, TimedSignal};
use scenemo::camera::{
    frames_from_motion, optimize_extrinsics, solve_pnp, CameraModel, ExtrinsicResult, Intrinsics, Observation2D,
};
use scenemo::io::{config_hash, load_sequence, read_json, save_sequence, write_json, BodyRef, Provenance, SequenceContainer};
use scenemo::metrics::{self, Trajectory};
use scenemo::optim::{optimize_sequence, OptimConfig, OptimReport};
use scenemo::sim::{inject_drift, simulate, synth_motion};
use scenemo::{Error, Result};

use crate::config::ToolConfig;
use crate::{invalid, CalibPnpArgs, CalibTrajectoryArgs, CalibrateCommand, Cli, Command, EvaluateArgs, MotionField};
use crate::{OptimizeArgs, RefineCameraArgs, SimulateArgs, SyncArgs};

/// Settings after applying the subcommand's flags on top of `base`.
pub fn effective_config(base: ToolConfig, command: &Command) -> ToolConfig {
    let mut c = base;
    match command {
        Command::Simulate(a) => {
            let s = &mut c.simulate;
            if let Some(seed) = a.seed {
                s.drift.seed = seed;
            }
            if let Some(m) = a.motion {
                s.motion.kind = m.into();
            }
            if let Some(d) = a.duration {
                s.motion.duration_s = d;
            }
            if let Some(r) = a.rate {
                s.motion.rate_hz = r;
            }
            if let Some(j) = a.jumps {
                s.motion.jumps_per_bracket = j;
            }
            if let Some(b) = a.drift_bias {
                s.drift.trans_bias_per_s[0] = b;
            }
            if let Some(n) = a.orient_noise {
                s.drift.orient_noise_std = n;
            }
            if a.no_camera {
                s.camera = None;
            }
        }
        Command::Sync(a) => {
            let s = &mut c.sync;
            if let Some(r) = a.rate {
                s.target_hz = r;
            }
            if let Some(p) = a.min_prominence {
                s.min_prominence = p;
            }
            if let Some(m) = a.min_separation {
                s.min_separation = m;
            }
        }
        Command::Optimize(a) => {
            let o = &mut c.optimize;
            let w = &mut o.loss.weights;
            let set = |dst: &mut f64, v: Option<f64>| {
                if let Some(v) = v {
                    *dst = v;
                }
            };
            set(&mut w.trans, a.lambda_trans);
            set(&mut w.orit, a.lambda_orit);
            set(&mut w.jts, a.lambda_jts);
            set(&mut w.sc, a.lambda_sc);
            set(&mut w.pri, a.lambda_pri);
            set(&mut w.m2p, a.lambda_m2p);
            set(&mut o.step_size, a.step_size);
            if let Some(k) = a.window_k {
                o.window_k = k;
            }
            if let Some(v) = a.overlap {
                o.window_overlap = v;
            }
            if let Some(v) = a.max_iters {
                o.max_iters = v;
            }
        }
        Command::RefineCamera(a) => {
            let r = &mut c.refine_camera;
            if let Some(v) = a.lambda_kpt {
                r.lambda_kpt = v;
            }
            if let Some(v) = a.lambda_box {
                r.lambda_box = v;
            }
            if let Some(v) = a.max_iters {
                r.max_iters = v;
            }
            if let Some(v) = a.temporal_weight {
                r.temporal_weight = v;
            }
        }
        Command::Evaluate(a) => {
            let e = &mut c.evaluate;
            if let Some(v) = a.root_align {
                e.root_align = v;
            }
            if let Some(p) = a.prealign {
                e.prealign = p.into();
            }
            if let Some(d) = a.rpe_delta {
                e.rpe_delta_s = d;
            }
        }
        Command::Calibrate(_) => {}
    }
    c
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = effective_config(ToolConfig::resolve(cli.config.as_deref())?, &cli.command);
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    match &cli.command {
        Command::Simulate(a) => run_simulate(a, &cfg),
        Command::Sync(a) => run_sync(a, &cfg),
        Command::Calibrate(CalibrateCommand::Trajectory(a)) => run_calib_trajectory(a),
        Command::Calibrate(CalibrateCommand::Pnp(a)) => run_calib_pnp(a),
        Command::Optimize(a) => run_optimize(a, &cfg),
        Command::RefineCamera(a) => run_refine_camera(a, &cfg),
        Command::Evaluate(a) => run_evaluate(a, &cfg),
    }
}

fn run_simulate(a: &SimulateArgs, cfg: &ToolConfig) -> Result<()> {
    let sim = &cfg.simulate;
    let cap = simulate(sim)?;
    let container = SequenceContainer {
        rate_hz: cap.ground_truth.rate_hz,
        frame_times: cap.ground_truth.frame_times.clone(),
        body: BodyRef { template: sim.template, beta: sim.motion.beta.clone() },
        ground_truth: Some(cap.ground_truth.frames.clone()),
        estimate: Some(cap.drifted.frames.clone()),
        observations: (!cap.observations.is_empty()).then(|| cap.observations.clone()),
        clouds: Some(cap.clouds.clone()),
        camera: cap.camera.clone(),
        scene: Some(cap.scene.clone()),
        provenance: Provenance {
            generator: "scenemo simulate".into(),
            seed: Some(sim.drift.seed),
            config_hash: Some(config_hash(sim)?),
        },
    };
    save_sequence(&container, &a.out)?;

    if let Some(rate) = a.imu_rate {
        let dir = a.out.join("streams");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_json(&dir.join("lidar.json"), &MotionStream::from_sequence("lidar", &cap.ground_truth))?;
        let mut spec = sim.motion.clone();
        spec.rate_hz = rate;
        let imu = inject_drift(&synth_motion(&spec, &KinematicTree::smpl())?.sequence, &sim.drift)?;
        let mut stream = MotionStream::from_sequence("imu", &imu);
        for t in &mut stream.timestamps {
            *t += a.imu_clock_offset;
        }
        write_json(&dir.join("imu.json"), &stream)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PeakOverride {
    stream_id: String,
    timestamp: f64,
}

#[derive(Debug, Serialize)]
struct SyncReport<'a> {
    ids: &'a [String],
    offsets: &'a [f64],
    peaks: &'a [Vec<f64>],
    target_hz: f64,
    config_hash: String,
}

fn stream_sequence(s: &MotionStream) -> MotionSequence {
    let span = s.timestamps.last().copied().unwrap_or(0.0) - s.timestamps.first().copied().unwrap_or(0.0);
    let rate = if s.timestamps.len() > 1 && span > 0.0 { (s.timestamps.len() - 1) as f64 / span } else { 1.0 };
    MotionSequence { frames: s.frames.clone(), rate_hz: rate, frame_times: s.timestamps.clone() }
}

fn run_sync(a: &SyncArgs, cfg: &ToolConfig) -> Result<()> {
    let s = &cfg.sync;
    let streams: Vec<MotionStream> = a.streams.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    let mut manual: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    if let Some(p) = &a.peaks {
        let list: Vec<PeakOverride> = read_json(p)?;
        for o in list {
            if !streams.iter().any(|s| s.id == o.stream_id) {
                return Err(invalid(format!("peak override names unknown stream `{}`", o.stream_id)));
            }
            manual.entry(o.stream_id).or_default().push(o.timestamp);
        }
    }
    let peaks: Vec<Vec<f64>> = streams
        .iter()
        .map(|st| match manual.get(&st.id) {
            Some(p) => {
                let mut p = p.clone();
                p.sort_by(f64::total_cmp);
                Ok(p)
            }
            None => {
                st.validate()?;
                let signal = TimedSignal::root_height(&stream_sequence(st))?;
                detect_peaks(&signal, s.min_prominence, s.min_separation)
            }
        })
        .collect::<Result<_>>()?;
    let aligned = align_streams(&streams, &peaks, s.target_hz)?;

    let pick = |id: &str| -> Result<Vec<BodyParams>> {
        let i = aligned.ids.iter().position(|x| x == id).ok_or_else(|| invalid(format!("no stream named `{id}`")))?;
        Ok(aligned.sequences[i].frames.clone())
    };
    let estimate_id = match &a.estimate {
        Some(id) => id.clone(),
        None => aligned.ids[aligned.ids.len().min(2) - 1].clone(),
    };
    let grid = &aligned.sequences[0];
    let container = SequenceContainer {
        rate_hz: s.target_hz,
        frame_times: grid.frame_times.clone(),
        body: BodyRef { template: Default::default(), beta: vec![0.0; SHAPE_DIM] },
        ground_truth: a.ground_truth.as_deref().map(pick).transpose()?,
        estimate: Some(pick(&estimate_id)?),
        observations: None,
        clouds: None,
        camera: None,
        scene: None,
        provenance: Provenance { generator: "scenemo sync".into(), seed: None, config_hash: Some(config_hash(s)?) },
    };
    save_sequence(&container, &a.out)?;
    let report = SyncReport {
        ids: &aligned.ids,
        offsets: &aligned.offsets,
        peaks: &peaks,
        target_hz: s.target_hz,
        config_hash: config_hash(s)?,
    };
    write_json(&a.out.join("sync.json"), &report)
}

fn run_calib_trajectory(a: &CalibTrajectoryArgs) -> Result<()> {
    let imu = Trajectory::load_csv(&a.imu)?;
    let lidar = Trajectory::load_csv(&a.lidar)?;
    if imu.len() != lidar.len() {
        return Err(Error::Dimension(format!("{} inertial vs {} LiDAR samples", imu.len(), lidar.len())));
    }
    let xy = |t: &Trajectory| t.positions.iter().map(|p| Vector2::new(p.x, p.y)).collect::<Vec<_>>();
    let result = trajectory_align(&xy(&imu), &xy(&lidar))?;
    write_json(&a.out, &result)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Correspondences {
    intrinsics: Intrinsics,
    world: Vec<[f64; 3]>,
    pixels: Vec<[f64; 2]>,
}

fn run_calib_pnp(a: &CalibPnpArgs) -> Result<()> {
    let c: Correspondences = read_json(&a.correspondences)?;
    if c.world.len() != c.pixels.len() {
        return Err(Error::Dimension(format!("{} world points vs {} pixels", c.world.len(), c.pixels.len())));
    }
    let world: Vec<Vector3<f64>> = c.world.iter().map(|p| Vector3::from(*p)).collect();
    let pixels: Vec<Vector2<f64>> = c.pixels.iter().map(|p| Vector2::from(*p)).collect();
    let result = solve_pnp(&world, &pixels, &c.intrinsics)?;
    let camera = CameraModel { intrinsics: c.intrinsics, extrinsics: vec![result.extrinsic], timestamps: vec![0.0] };
    write_json(&a.out, &camera)?;
    println!("{}", serde_json::to_string(&result)?);
    Ok(())
}

fn shaped_body(body: &BodyRef) -> Result<ShapedBody> {
    let template = BodyTemplate::procedural(&body.template)?;
    ShapedBody::new(&template, &KinematicTree::smpl(), &body.beta)
}

fn motion(c: &SequenceContainer, field: MotionField, what: &str) -> Result<MotionSequence> {
    let frames = match field {
        MotionField::Estimate => c.estimate.as_ref(),
        MotionField::GroundTruth => c.ground_truth.as_ref(),
    };
    let name = match field {
        MotionField::Estimate => "estimate",
        MotionField::GroundTruth => "ground_truth",
    };
    let frames = frames.ok_or_else(|| invalid(format!("{what} container has no {name} motion")))?;
    Ok(MotionSequence { frames: frames.clone(), rate_hz: c.rate_hz, frame_times: c.frame_times.clone() })
}

#[derive(Debug, Serialize)]
struct OptimizeOutput<'a> {
    config: &'a OptimConfig,
    config_hash: String,
    report: OptimReport,
}

fn run_optimize(a: &OptimizeArgs, cfg: &ToolConfig) -> Result<()> {
    let oc = &cfg.optimize;
    oc.validate()?;
    let mut c = load_sequence(&a.input)?;
    let initial = motion(&c, MotionField::Estimate, "input")?;
    let clouds = c.clouds.as_ref().ok_or_else(|| invalid("input container has no point clouds"))?;
    let scene = c.scene.as_ref().ok_or_else(|| invalid("input container has no scene"))?;
    let body = shaped_body(&c.body)?;
    let (refined, report) = optimize_sequence(&initial, clouds, &body, scene, oc)?;
    let hash = config_hash(oc)?;
    c.estimate = Some(refined.frames);
    c.provenance = Provenance { generator: "scenemo optimize".into(), seed: c.provenance.seed, config_hash: Some(hash.clone()) };
    save_sequence(&c, &a.out)?;
    let path = a.report.clone().unwrap_or_else(|| a.out.join("optim_report.json"));
    write_json(&path, &OptimizeOutput { config: oc, config_hash: hash, report })
}

#[derive(Debug, Serialize)]
struct RefineOutput {
    camera: CameraModel,
    frames: Vec<ExtrinsicResult>,
    config_hash: String,
}

fn run_refine_camera(a: &RefineCameraArgs, cfg: &ToolConfig) -> Result<()> {
    let c = load_sequence(&a.input)?;
    let init: CameraModel = match &a.camera {
        Some(p) => read_json(p)?,
        None => c.camera.clone().ok_or_else(|| invalid("no --camera given and the container has no camera"))?,
    };
    init.validate()?;
    let n = c.len();
    let extrinsics = match init.extrinsics.len() {
        1 => vec![init.extrinsics[0]; n],
        m if m == n => init.extrinsics.clone(),
        m => return Err(Error::Dimension(format!("camera has {m} extrinsics, container has {n} frames"))),
    };
    let obs: Vec<Observation2D> = c
        .observations
        .as_ref()
        .ok_or_else(|| invalid("input container has no camera observations"))?
        .iter()
        .map(|o| o.observation.clone())
        .collect();
    let seq = motion(&c, a.motion, "input")?;
    let body = shaped_body(&c.body)?;
    let frames = frames_from_motion(&body, &seq.frames, &obs)?;
    let results = optimize_extrinsics(&frames, &init.intrinsics, &extrinsics, &cfg.refine_camera)?;
    let camera = CameraModel {
        intrinsics: init.intrinsics,
        extrinsics: results.iter().map(|r| r.extrinsic).collect(),
        timestamps: c.frame_times.clone(),
    };
    write_json(&a.out, &RefineOutput { camera, frames: results, config_hash: config_hash(&cfg.refine_camera)? })
}

fn run_evaluate(a: &EvaluateArgs, cfg: &ToolConfig) -> Result<()> {
    let e = &cfg.evaluate;
    let pc = load_sequence(&a.pred)?;
    let gc = load_sequence(&a.gt)?;
    let pred = motion(&pc, a.pred_field, "pred")?;
    let gt = motion(&gc, a.gt_field, "gt")?;
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("pred has {} frames, gt has {}", pred.len(), gt.len())));
    }
    let joints = |body: &ShapedBody, seq: &MotionSequence| -> Result<Vec<Vec<Vector3<f64>>>> {
        seq.frames.iter().map(|p| Ok(body.pose(p)?.positions)).collect()
    };
    let pj = joints(&shaped_body(&pc.body)?, &pred)?;
    let gj = joints(&shaped_body(&gc.body)?, &gt)?;
    let m = metrics::evaluate_joints(&pj, &gj, &gt.frame_times, e)?;
    fs::create_dir_all(&a.out).map_err(|err| Error::io(&a.out, err))?;
    write_json(&a.out.join("metrics.json"), &m)?;
    let csv = m.per_frame_csv(&gt.frame_times);
    let path = a.out.join("per_frame.csv");
    fs::write(&path, csv).map_err(|err| Error::io(&path, err))
}
