//! Python bindings. Structured values (configs, reports, body parameters)
//! cross the boundary as plain dicts and lists with the same field names as
//! the JSON files the toolkit writes.

use std::path::PathBuf;

use nalgebra::{Vector2, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use scenemo::body::{BodyParams, BodyTemplate, KinematicTree, MotionSequence, ShapedBody, TemplateOptions, JOINT_NAMES};
use scenemo::calib::{detect_peaks as core_detect_peaks, trajectory_align as core_trajectory_align, TimedSignal};
use scenemo::camera::{self, BBox, Extrinsic, Intrinsics};
use scenemo::io::{self, BodyRef, Provenance, SequenceContainer};
use scenemo::metrics::{self, EvalOptions, Prealign, Trajectory};
use scenemo::optim::{optimize_sequence, OptimConfig};
use scenemo::sim::{self, SimConfig};

create_exception!(scenemo, ScenemoError, PyException, "Raised for any toolkit failure; args are (kind, message).");

fn err(e: scenemo::Error) -> PyErr {
    ScenemoError::new_err((e.kind(), e.to_string()))
}

fn json_err(e: serde_json::Error) -> PyErr {
    ScenemoError::new_err(("json", e.to_string()))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(json_err)
}

fn from_py_or_default<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    obj.map_or_else(|| Ok(T::default()), from_py)
}

fn vec3s(v: &[[f64; 3]]) -> Vec<Vector3<f64>> {
    v.iter().map(|p| Vector3::from(*p)).collect()
}

fn vec2s(v: &[[f64; 2]]) -> Vec<Vector2<f64>> {
    v.iter().map(|p| Vector2::from(*p)).collect()
}

fn arrays(v: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn joint_frames(v: &[Vec<[f64; 3]>]) -> Vec<Vec<Vector3<f64>>> {
    v.iter().map(|f| vec3s(f)).collect()
}

fn params(theta: Vec<[f64; 3]>, trans: [f64; 3], beta: &[f64]) -> BodyParams {
    let mut p = BodyParams::zero();
    p.theta = vec3s(&theta);
    p.trans = Vector3::from(trans);
    p.beta = beta.to_vec();
    p
}

/// Shaped articulated body with 24 joints.
#[pyclass(module = "scenemo", frozen)]
struct BodyModel {
    inner: ShapedBody,
    beta: Vec<f64>,
}

#[pymethods]
impl BodyModel {
    #[new]
    #[pyo3(signature = (beta=None, template=None))]
    fn new(beta: Option<Vec<f64>>, template: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let opts: TemplateOptions = from_py_or_default(template)?;
        let beta = beta.unwrap_or_else(|| BodyParams::zero().beta);
        let t = BodyTemplate::procedural(&opts).map_err(err)?;
        let inner = ShapedBody::new(&t, &KinematicTree::smpl(), &beta).map_err(err)?;
        Ok(Self { inner, beta })
    }

    #[staticmethod]
    fn joint_names() -> Vec<&'static str> {
        JOINT_NAMES.to_vec()
    }

    /// World joint positions for 24 axis-angle rotations and a root translation.
    fn joints(&self, theta: Vec<[f64; 3]>, trans: [f64; 3]) -> PyResult<Vec<[f64; 3]>> {
        let pose = self.inner.pose(&params(theta, trans, &self.beta)).map_err(err)?;
        Ok(arrays(&pose.positions))
    }

    /// Skinned mesh vertices.
    fn vertices(&self, theta: Vec<[f64; 3]>, trans: [f64; 3]) -> PyResult<Vec<[f64; 3]>> {
        let pose = self.inner.pose(&params(theta, trans, &self.beta)).map_err(err)?;
        Ok(arrays(&self.inner.skin(&pose)))
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces.clone()
    }
}

/// A sequence container: motion, sweeps, camera data and scene.
#[pyclass(module = "scenemo", frozen)]
struct Sequence {
    inner: SequenceContainer,
}

fn body_of(c: &SequenceContainer) -> PyResult<ShapedBody> {
    let t = BodyTemplate::procedural(&c.body.template).map_err(err)?;
    ShapedBody::new(&t, &KinematicTree::smpl(), &c.body.beta).map_err(err)
}

fn field<'a>(c: &'a SequenceContainer, name: &str) -> PyResult<&'a Vec<BodyParams>> {
    let v = match name {
        "estimate" => c.estimate.as_ref(),
        "ground_truth" => c.ground_truth.as_ref(),
        _ => return Err(ScenemoError::new_err(("invalid_input", format!("unknown motion field `{name}`")))),
    };
    v.ok_or_else(|| ScenemoError::new_err(("invalid_input", format!("container has no {name} motion"))))
}

#[pymethods]
impl Sequence {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_sequence(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_sequence(&self.inner, &path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn rate_hz(&self) -> f64 {
        self.inner.rate_hz
    }

    #[getter]
    fn frame_times(&self) -> Vec<f64> {
        self.inner.frame_times.clone()
    }

    fn manifest(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.manifest())
    }

    /// Body parameters of one motion (`"estimate"` or `"ground_truth"`), or `None`.
    #[pyo3(signature = (name="estimate"))]
    fn motion(&self, py: Python<'_>, name: &str) -> PyResult<Option<Py<PyAny>>> {
        match field(&self.inner, name) {
            Ok(v) => Ok(Some(to_py(py, v)?)),
            Err(_) => Ok(None),
        }
    }

    /// World joints per frame of one motion.
    #[pyo3(signature = (name="estimate"))]
    fn joints(&self, name: &str) -> PyResult<Vec<Vec<[f64; 3]>>> {
        let body = body_of(&self.inner)?;
        field(&self.inner, name)?
            .iter()
            .map(|p| Ok(arrays(&body.pose(p).map_err(err)?.positions)))
            .collect()
    }

    fn camera(&self, py: Python<'_>) -> PyResult<Option<Py<PyAny>>> {
        self.inner.camera.as_ref().map(|c| to_py(py, c)).transpose()
    }

    /// Refine the estimate against the scene and sweeps. Returns the refined
    /// sequence and the optimizer report.
    #[pyo3(signature = (config=None))]
    fn optimize(&self, py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<(Sequence, Py<PyAny>)> {
        let cfg: OptimConfig = from_py_or_default(config)?;
        let c = &self.inner;
        let initial =
            MotionSequence { frames: field(c, "estimate")?.clone(), rate_hz: c.rate_hz, frame_times: c.frame_times.clone() };
        let missing = |what: &str| ScenemoError::new_err(("invalid_input", format!("container has no {what}")));
        let clouds = c.clouds.as_ref().ok_or_else(|| missing("point clouds"))?;
        let scene = c.scene.as_ref().ok_or_else(|| missing("scene"))?;
        let body = body_of(c)?;
        let (refined, report) = py
            .detach(|| optimize_sequence(&initial, clouds, &body, scene, &cfg))
            .map_err(err)?;
        let mut out = c.clone();
        out.estimate = Some(refined.frames);
        out.provenance.generator = "scenemo optimize".into();
        out.provenance.config_hash = Some(io::config_hash(&cfg).map_err(err)?);
        Ok((Sequence { inner: out }, to_py(py, &report)?))
    }

    /// Metrics of this sequence's `pred` motion against `gt`'s `gt_field` motion.
    #[pyo3(signature = (gt, pred_field="estimate", gt_field="ground_truth", options=None))]
    fn evaluate(
        &self,
        py: Python<'_>,
        gt: &Sequence,
        pred_field: &str,
        gt_field: &str,
        options: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Py<PyAny>> {
        let opts: EvalOptions = from_py_or_default(options)?;
        let pj = joint_frames(&self.joints(pred_field)?);
        let gj = joint_frames(&gt.joints(gt_field)?);
        let m = metrics::evaluate_joints(&pj, &gj, &gt.inner.frame_times, &opts).map_err(err)?;
        to_py(py, &m)
    }
}

/// Run the simulator and package the result as a sequence container.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn simulate(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Sequence> {
    let cfg: SimConfig = from_py_or_default(config)?;
    let cap = py.detach(|| sim::simulate(&cfg)).map_err(err)?;
    let inner = SequenceContainer {
        rate_hz: cap.ground_truth.rate_hz,
        frame_times: cap.ground_truth.frame_times.clone(),
        body: BodyRef { template: cfg.template, beta: cfg.motion.beta.clone() },
        ground_truth: Some(cap.ground_truth.frames),
        estimate: Some(cap.drifted.frames),
        observations: (!cap.observations.is_empty()).then_some(cap.observations),
        clouds: Some(cap.clouds),
        camera: cap.camera,
        scene: Some(cap.scene),
        provenance: Provenance {
            generator: "scenemo simulate".into(),
            seed: Some(cfg.drift.seed),
            config_hash: Some(io::config_hash(&cfg).map_err(err)?),
        },
    };
    Ok(Sequence { inner })
}

/// Default settings for `"simulate"`, `"optimize"`, `"refine_camera"` or `"evaluate"`.
#[pyfunction]
fn default_config(py: Python<'_>, kind: &str) -> PyResult<Py<PyAny>> {
    match kind {
        "simulate" => to_py(py, &SimConfig::default()),
        "optimize" => to_py(py, &OptimConfig::default()),
        "refine_camera" => to_py(py, &camera::CameraOptConfig::default()),
        "evaluate" => to_py(py, &EvalOptions::default()),
        _ => Err(ScenemoError::new_err(("invalid_input", format!("no config named `{kind}`")))),
    }
}

/// Root-aligned (default) or global mean per-joint error, mm.
#[pyfunction]
#[pyo3(signature = (pred, gt, root_align=true))]
fn mpjpe(pred: Vec<Vec<[f64; 3]>>, gt: Vec<Vec<[f64; 3]>>, root_align: bool) -> PyResult<f64> {
    metrics::mpjpe_with(&joint_frames(&pred), &joint_frames(&gt), root_align).map_err(err)
}

/// Mean per-joint error without any alignment, mm.
#[pyfunction]
fn g_mpjpe(pred: Vec<Vec<[f64; 3]>>, gt: Vec<Vec<[f64; 3]>>) -> PyResult<f64> {
    metrics::g_mpjpe(&joint_frames(&pred), &joint_frames(&gt)).map_err(err)
}

/// Mean per-joint error after per-frame Procrustes alignment, mm.
#[pyfunction]
fn pa_mpjpe(pred: Vec<Vec<[f64; 3]>>, gt: Vec<Vec<[f64; 3]>>) -> PyResult<f64> {
    metrics::pa_mpjpe(&joint_frames(&pred), &joint_frames(&gt)).map_err(err)
}

fn trajectories(times: Vec<f64>, pred: &[[f64; 3]], gt: &[[f64; 3]]) -> PyResult<(Trajectory, Trajectory)> {
    let p = Trajectory::new(times.clone(), vec3s(pred)).map_err(err)?;
    let g = Trajectory::new(times, vec3s(gt)).map_err(err)?;
    Ok((p, g))
}

/// Absolute trajectory error statistics, meters.
#[pyfunction]
#[pyo3(signature = (times, pred, gt, prealign="none"))]
fn ate(py: Python<'_>, times: Vec<f64>, pred: Vec<[f64; 3]>, gt: Vec<[f64; 3]>, prealign: &str) -> PyResult<Py<PyAny>> {
    let mode: Prealign = serde_json::from_value(serde_json::Value::from(prealign)).map_err(json_err)?;
    let (p, g) = trajectories(times, &pred, &gt)?;
    to_py(py, &metrics::ate(&p, &g, mode).map_err(err)?)
}

/// Relative pose error over `delta` seconds, meters.
#[pyfunction]
fn rpe(py: Python<'_>, times: Vec<f64>, pred: Vec<[f64; 3]>, gt: Vec<[f64; 3]>, delta: f64) -> PyResult<Py<PyAny>> {
    let (p, g) = trajectories(times, &pred, &gt)?;
    to_py(py, &metrics::rpe(&p, &g, delta).map_err(err)?)
}

#[pyfunction]
fn detect_peaks(times: Vec<f64>, values: Vec<f64>, min_prominence: f64, min_separation: f64) -> PyResult<Vec<f64>> {
    let s = TimedSignal::new(times, values).map_err(err)?;
    core_detect_peaks(&s, min_prominence, min_separation).map_err(err)
}

/// Planar rigid transform carrying `imu_xy` onto `lidar_xy`.
#[pyfunction]
fn trajectory_align(py: Python<'_>, imu_xy: Vec<[f64; 2]>, lidar_xy: Vec<[f64; 2]>) -> PyResult<Py<PyAny>> {
    to_py(py, &core_trajectory_align(&vec2s(&imu_xy), &vec2s(&lidar_xy)).map_err(err)?)
}

#[pyfunction]
fn solve_pnp(
    py: Python<'_>,
    world: Vec<[f64; 3]>,
    pixels: Vec<[f64; 2]>,
    intrinsics: &Bound<'_, PyAny>,
) -> PyResult<Py<PyAny>> {
    let k: Intrinsics = from_py(intrinsics)?;
    to_py(py, &camera::solve_pnp(&vec3s(&world), &vec2s(&pixels), &k).map_err(err)?)
}

/// Pixel coordinates and validity flags of world points.
#[pyfunction]
fn project(
    points: Vec<[f64; 3]>,
    intrinsics: &Bound<'_, PyAny>,
    extrinsic: &Bound<'_, PyAny>,
) -> PyResult<(Vec<[f64; 2]>, Vec<bool>)> {
    let k: Intrinsics = from_py(intrinsics)?;
    let e: Extrinsic = from_py(extrinsic)?;
    let (px, valid) = camera::project(&vec3s(&points), &k, &e);
    Ok((px.iter().map(|p| [p.x, p.y]).collect(), valid))
}

fn bbox(b: [f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3])
}

/// Intersection over union of `(x_min, y_min, x_max, y_max)` boxes.
#[pyfunction]
fn iou(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    camera::iou(&bbox(a), &bbox(b)).map_err(err)
}

#[pyfunction]
fn giou(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    camera::giou(&bbox(a), &bbox(b)).map_err(err)
}

#[pymodule]
#[pyo3(name = "scenemo")]
pub fn scenemo_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ScenemoError", m.py().get_type::<ScenemoError>())?;
    m.add("SCHEMA_VERSION", io::SCHEMA_VERSION)?;
    m.add_class::<BodyModel>()?;
    m.add_class::<Sequence>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(g_mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(pa_mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(ate, m)?)?;
    m.add_function(wrap_pyfunction!(rpe, m)?)?;
    m.add_function(wrap_pyfunction!(detect_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory_align, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pnp, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(giou, m)?)?;
    Ok(())
}
