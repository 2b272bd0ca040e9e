//! Sequence container: a directory with a JSON manifest, per-frame records
//! and one PLY file per LiDAR sweep.
//!
//! ```text
//! manifest.json      schema version, rate, frame count, conventions, layout
//! frames.json        per-frame times, body parameters, detections, sweep refs
//! clouds/000000.ply  labeled points of sweep 0 (label 0 scene, 1 body)
//! camera.json        intrinsics and per-frame extrinsics (optional)
//! scene.ply          scene mesh (optional)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::ply::{read_ply, write_ply, PlyData, PlyEncoding};
use crate::body::params::BodyParams;
use crate::body::template::TemplateOptions;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::scene::SceneMesh;
use crate::sim::{CameraObservation, PointCloudFrame, PointLabel};

pub const SCHEMA_VERSION: u32 = 1;
pub const COORDINATE_CONVENTION: &str = "z-up, meters";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Procedural template settings and shape used to build the body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyRef {
    pub template: TemplateOptions,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

/// File names relative to the container directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileLayout {
    pub frames: String,
    pub clouds_dir: Option<String>,
    pub camera: Option<String>,
    pub scene: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub rate_hz: f64,
    pub frame_count: usize,
    pub coordinate_convention: String,
    pub body: BodyRef,
    pub files: FileLayout,
    pub provenance: Provenance,
}

/// Where a sweep's points live and where the sensor was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudRef {
    pub file: String,
    pub sensor_origin: Vector3<f64>,
    pub sensor_rotation: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<BodyParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<BodyParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<CameraObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud: Option<CloudRef>,
}

/// Everything known about one capture, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceContainer {
    pub rate_hz: f64,
    pub frame_times: Vec<f64>,
    pub body: BodyRef,
    pub ground_truth: Option<Vec<BodyParams>>,
    /// The motion estimate: inertial (drifted) input or a refined result.
    pub estimate: Option<Vec<BodyParams>>,
    pub observations: Option<Vec<CameraObservation>>,
    pub clouds: Option<Vec<PointCloudFrame>>,
    pub camera: Option<CameraModel>,
    pub scene: Option<SceneMesh>,
    pub provenance: Provenance,
}

impl SequenceContainer {
    pub fn len(&self) -> usize {
        self.frame_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let check = |name: &str, len: Option<usize>| match len {
            Some(m) if m != n => Err(Error::Dimension(format!("{name} has {m} frames, container has {n}"))),
            _ => Ok(()),
        };
        check("ground_truth", self.ground_truth.as_ref().map(Vec::len))?;
        check("estimate", self.estimate.as_ref().map(Vec::len))?;
        check("observations", self.observations.as_ref().map(Vec::len))?;
        check("clouds", self.clouds.as_ref().map(Vec::len))?;
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!("rate must be positive, got {}", self.rate_hz)));
        }
        if self.frame_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("frame times must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION,
            rate_hz: self.rate_hz,
            frame_count: self.len(),
            coordinate_convention: COORDINATE_CONVENTION.into(),
            body: self.body.clone(),
            files: FileLayout {
                frames: "frames.json".into(),
                clouds_dir: self.clouds.as_ref().map(|_| "clouds".into()),
                camera: self.camera.as_ref().map(|_| "camera.json".into()),
                scene: self.scene.as_ref().map(|_| "scene.ply".into()),
            },
            provenance: self.provenance.clone(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { file: path.display().to_string(), reason: e.to_string() })
}

fn schema(file: &Path, field: &str, reason: impl Into<String>) -> Error {
    Error::Schema { file: file.display().to_string(), field: field.into(), reason: reason.into() }
}

/// Write the container into `dir`, creating it if needed. Existing files
/// with the same names are replaced.
pub fn save_sequence(container: &SequenceContainer, dir: &Path) -> Result<()> {
    container.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = container.manifest();
    let mut records: Vec<FrameRecord> = container
        .frame_times
        .iter()
        .enumerate()
        .map(|(i, &time)| FrameRecord {
            time,
            ground_truth: container.ground_truth.as_ref().map(|g| g[i].clone()),
            estimate: container.estimate.as_ref().map(|g| g[i].clone()),
            observation: container.observations.as_ref().map(|o| o[i].clone()),
            cloud: None,
        })
        .collect();
    if let (Some(clouds), Some(sub)) = (&container.clouds, &manifest.files.clouds_dir) {
        let cloud_dir = dir.join(sub);
        fs::create_dir_all(&cloud_dir).map_err(|e| Error::io(&cloud_dir, e))?;
        for (i, (cloud, rec)) in clouds.iter().zip(records.iter_mut()).enumerate() {
            let file = format!("{sub}/{i:06}.ply");
            let data = PlyData {
                vertices: cloud.points.clone(),
                faces: Vec::new(),
                labels: Some(cloud.labels.iter().map(|l| l.code()).collect()),
            };
            write_ply(&dir.join(&file), &data, PlyEncoding::Ascii)?;
            rec.cloud = Some(CloudRef { file, sensor_origin: cloud.sensor_origin, sensor_rotation: cloud.sensor_rotation });
        }
    }
    if let (Some(cam), Some(name)) = (&container.camera, &manifest.files.camera) {
        write_json(&dir.join(name), cam)?;
    }
    if let (Some(scene), Some(name)) = (&container.scene, &manifest.files.scene) {
        scene.save(&dir.join(name))?;
    }
    write_json(&dir.join(&manifest.files.frames), &records)?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// Read a container written by [`save_sequence`].
pub fn load_sequence(dir: &Path) -> Result<SequenceContainer> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw: serde_json::Value = read_json(&manifest_path)?;
    match raw.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(Error::Version { found: v as u32, expected: SCHEMA_VERSION }),
        None => return Err(schema(&manifest_path, "schema_version", "missing or not an integer")),
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| schema(&manifest_path, "manifest", e.to_string()))?;
    if manifest.coordinate_convention != COORDINATE_CONVENTION {
        return Err(schema(
            &manifest_path,
            "coordinate_convention",
            format!("expected \"{COORDINATE_CONVENTION}\", found \"{}\"", manifest.coordinate_convention),
        ));
    }
    let frames_path = dir.join(&manifest.files.frames);
    let records: Vec<FrameRecord> = read_json(&frames_path)?;
    if records.len() != manifest.frame_count {
        return Err(schema(
            &manifest_path,
            "frame_count",
            format!("manifest says {} frames, {} has {}", manifest.frame_count, manifest.files.frames, records.len()),
        ));
    }

    fn all_or_none<T>(file: &Path, field: &str, items: Vec<Option<T>>) -> Result<Option<Vec<T>>> {
        let present = items.iter().filter(|x| x.is_some()).count();
        if present == 0 {
            return Ok(None);
        }
        if present != items.len() {
            return Err(schema(file, field, format!("present on {present} of {} frames", items.len())));
        }
        Ok(Some(items.into_iter().map(|x| x.expect("checked")).collect()))
    }

    let frame_times = records.iter().map(|r| r.time).collect();
    let ground_truth = all_or_none(&frames_path, "ground_truth", records.iter().map(|r| r.ground_truth.clone()).collect())?;
    let estimate = all_or_none(&frames_path, "estimate", records.iter().map(|r| r.estimate.clone()).collect())?;
    let observations = all_or_none(&frames_path, "observation", records.iter().map(|r| r.observation.clone()).collect())?;
    let cloud_refs = all_or_none(&frames_path, "cloud", records.iter().map(|r| r.cloud.clone()).collect())?;
    let clouds = match cloud_refs {
        None => None,
        Some(refs) => Some(
            refs.iter()
                .zip(&records)
                .map(|(c, r)| load_cloud(dir, c, r.time))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let camera = match &manifest.files.camera {
        Some(name) => Some(read_json::<CameraModel>(&dir.join(name))?),
        None => None,
    };
    let scene = match &manifest.files.scene {
        Some(name) => {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::MissingFile(path));
            }
            Some(SceneMesh::load(&path)?)
        }
        None => None,
    };
    let container = SequenceContainer {
        rate_hz: manifest.rate_hz,
        frame_times,
        body: manifest.body,
        ground_truth,
        estimate,
        observations,
        clouds,
        camera,
        scene,
        provenance: manifest.provenance,
    };
    container.validate()?;
    Ok(container)
}

fn load_cloud(dir: &Path, c: &CloudRef, time: f64) -> Result<PointCloudFrame> {
    let path: PathBuf = dir.join(&c.file);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let data = read_ply(&path)?;
    let labels = match data.labels {
        Some(l) => l.into_iter().map(PointLabel::from_code).collect::<Result<Vec<_>>>()?,
        None => vec![PointLabel::Scene; data.vertices.len()],
    };
    Ok(PointCloudFrame {
        time,
        points: data.vertices,
        labels,
        sensor_origin: c.sensor_origin,
        sensor_rotation: c.sensor_rotation,
    })
}
