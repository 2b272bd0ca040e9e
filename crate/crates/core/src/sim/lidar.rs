//! Spinning multi-beam LiDAR simulation by exact ray casting.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::rotation::{log_map, rodrigues, rot_y, rot_z};
use crate::error::{Error, Result};
use crate::scene::{Aabb, SceneMesh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarModel {
    pub channels: usize,
    pub vertical_fov_deg: f64,
    pub azimuth_resolution_deg: f64,
    pub max_range: f64,
    /// Downward pitch of the sensor on its mount.
    pub tilt_down_deg: f64,
    /// Sensor position in the carrier frame (x forward, z up).
    pub mount_translation: Vector3<f64>,
    /// Standard deviation of Gaussian range jitter, meters. Zero disables it.
    pub range_noise_std: f64,
    /// Cast every beam, returning scene points too. When off, only beams that
    /// can reach the body are cast (they still test the scene for occlusion).
    pub scan_scene: bool,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            channels: 128,
            vertical_fov_deg: 45.0,
            azimuth_resolution_deg: 360.0 / 1024.0,
            max_range: 50.0,
            tilt_down_deg: 45.0,
            mount_translation: Vector3::zeros(),
            range_noise_std: 0.0,
            scan_scene: false,
        }
    }
}

impl LidarModel {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidInput("lidar needs at least one channel".into()));
        }
        if !(self.vertical_fov_deg > 0.0 && self.vertical_fov_deg < 180.0) {
            return Err(Error::InvalidInput(format!("vertical fov {} outside (0, 180)", self.vertical_fov_deg)));
        }
        if !(self.azimuth_resolution_deg > 0.0 && self.azimuth_resolution_deg <= 360.0) {
            return Err(Error::InvalidInput(format!("azimuth resolution {} must be in (0, 360]", self.azimuth_resolution_deg)));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::InvalidInput(format!("max range must be positive, got {}", self.max_range)));
        }
        if !(self.range_noise_std >= 0.0) || !self.tilt_down_deg.is_finite() {
            return Err(Error::InvalidInput("range noise must be non-negative and tilt finite".into()));
        }
        Ok(())
    }

    pub fn azimuth_bins(&self) -> usize {
        (360.0 / self.azimuth_resolution_deg).round().max(1.0) as usize
    }

    /// Channel spacing, radians.
    pub fn elevation_step(&self) -> f64 {
        self.vertical_fov_deg.to_radians() / self.channels as f64
    }

    pub fn azimuth_step(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.azimuth_bins() as f64
    }

    pub fn elevation(&self, channel: usize) -> f64 {
        let fov = self.vertical_fov_deg.to_radians();
        -0.5 * fov + (channel as f64 + 0.5) * fov / self.channels as f64
    }

    /// Beam direction in the sensor frame.
    pub fn beam(&self, channel: usize, bin: usize) -> Vector3<f64> {
        let e = self.elevation(channel);
        let a = bin as f64 * self.azimuth_step();
        Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin())
    }

    /// Whether a sensor-frame direction lies inside the vertical field of view.
    pub fn in_fov(&self, dir_sensor: &Vector3<f64>) -> bool {
        let n = dir_sensor.norm();
        if n == 0.0 {
            return false;
        }
        let e = (dir_sensor.z / n).clamp(-1.0, 1.0).asin();
        e.abs() <= 0.5 * self.vertical_fov_deg.to_radians()
    }
}

/// World pose of the sensor for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorPose {
    pub origin: Vector3<f64>,
    /// Sensor-to-world rotation, axis-angle.
    pub rotation: Vector3<f64>,
}

impl SensorPose {
    pub fn new(origin: Vector3<f64>, rotation: &Matrix3<f64>) -> Self {
        Self { origin, rotation: log_map(rotation) }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rodrigues(&self.rotation)
    }
}

/// How the scanning carrier follows the subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarrierSpec {
    /// Horizontal distance behind the subject, meters.
    pub follow_distance: f64,
    /// Carrier (mount) height above the floor, meters.
    pub height: f64,
}

impl Default for CarrierSpec {
    fn default() -> Self {
        Self { follow_distance: 3.0, height: 1.8 }
    }
}

/// Sensor pose for a carrier trailing a subject whose pelvis is at
/// `subject` with heading `yaw` (radians about +z).
pub fn carrier_sensor_pose(model: &LidarModel, carrier: &CarrierSpec, subject: &Vector3<f64>, yaw: f64) -> SensorPose {
    let forward = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let base = Vector3::new(subject.x, subject.y, 0.0) - forward * carrier.follow_distance + Vector3::z() * carrier.height;
    let r_carrier = rot_z(yaw);
    let origin = base + r_carrier * model.mount_translation;
    SensorPose::new(origin, &(r_carrier * rot_y(model.tilt_down_deg.to_radians())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointLabel {
    Scene,
    Body,
}

impl PointLabel {
    pub fn code(self) -> u8 {
        match self {
            PointLabel::Scene => 0,
            PointLabel::Body => 1,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(PointLabel::Scene),
            1 => Ok(PointLabel::Body),
            _ => Err(Error::InvalidInput(format!("unknown point label {c}"))),
        }
    }
}

/// One LiDAR sweep in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloudFrame {
    pub time: f64,
    pub points: Vec<Vector3<f64>>,
    pub labels: Vec<PointLabel>,
    pub sensor_origin: Vector3<f64>,
    /// Sensor-to-world rotation, axis-angle.
    pub sensor_rotation: Vector3<f64>,
}

impl PointCloudFrame {
    pub fn empty(time: f64, pose: &SensorPose) -> Self {
        Self { time, points: Vec::new(), labels: Vec::new(), sensor_origin: pose.origin, sensor_rotation: pose.rotation }
    }

    pub fn sensor_pose(&self) -> SensorPose {
        SensorPose { origin: self.sensor_origin, rotation: self.sensor_rotation }
    }

    pub fn body_points(&self) -> Vec<Vector3<f64>> {
        self.points.iter().zip(&self.labels).filter(|(_, l)| **l == PointLabel::Body).map(|(p, _)| *p).collect()
    }

    pub fn validate(&self, max_range: f64) -> Result<()> {
        if self.labels.len() != self.points.len() {
            return Err(Error::Dimension(format!("{} labels for {} points", self.labels.len(), self.points.len())));
        }
        for p in &self.points {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("point cloud coordinate".into()));
            }
            if (p - self.sensor_origin).norm() > max_range * (1.0 + 1e-12) {
                return Err(Error::InvalidInput("point beyond max range".into()));
            }
        }
        Ok(())
    }
}

/// Cast every beam of one sweep against the scene and the body.
///
/// The nearest surface along each beam wins, so occlusion between the body
/// and the scene is exact. `noise_seed` only matters with range jitter.
pub fn lidar_scan(
    model: &LidarModel,
    scene: &SceneMesh,
    body_verts: &[Vector3<f64>],
    body_faces: &[[usize; 3]],
    pose: &SensorPose,
    time: f64,
    noise_seed: u64,
) -> Result<PointCloudFrame> {
    model.validate()?;
    let body = SceneMesh::new_unchecked(body_verts.to_vec(), body_faces.to_vec());
    let r = pose.rotation_matrix();
    let body_box = body.bounds().map(|b| b.inflated());
    let mut frame = PointCloudFrame::empty(time, pose);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let jitter = (model.range_noise_std > 0.0).then(|| Normal::new(0.0, model.range_noise_std).unwrap());
    let bins: Vec<usize> = match (&body_box, model.scan_scene) {
        (Some(bb), false) => azimuth_bins_towards(model, &r, &pose.origin, bb),
        (None, false) => Vec::new(),
        (_, true) => (0..model.azimuth_bins()).collect(),
    };
    for c in 0..model.channels {
        for &b in &bins {
            let dir = r * model.beam(c, b);
            let may_hit_body = match &body_box {
                Some(bb) => ray_hits_box(bb, &pose.origin, &dir, model.max_range),
                None => false,
            };
            if !may_hit_body && !model.scan_scene {
                continue;
            }
            let body_hit = if may_hit_body { body.ray_cast_unit(&pose.origin, &dir, model.max_range) } else { None };
            let limit = body_hit.map_or(model.max_range, |h| h.distance);
            let scene_hit = if scene.is_empty() { None } else { scene.ray_cast_unit(&pose.origin, &dir, limit) };
            let (dist, label) = match (body_hit, scene_hit) {
                (_, Some(s)) if body_hit.is_none_or(|h| s.distance < h.distance) => (s.distance, PointLabel::Scene),
                (Some(h), _) => (h.distance, PointLabel::Body),
                _ => continue,
            };
            let dist = match &jitter {
                Some(n) => (dist + n.sample(&mut rng)).clamp(0.0, model.max_range),
                None => dist,
            };
            frame.points.push(pose.origin + dir * dist);
            frame.labels.push(label);
        }
    }
    Ok(frame)
}

/// Azimuth bins whose beams can reach `bounds`, in increasing order.
///
/// The box's footprint on the sensor's horizontal plane is a convex
/// polygon; unless it surrounds the sensor axis its azimuth extent is set by
/// the corners.
pub(crate) fn azimuth_bins_towards(model: &LidarModel, r: &Matrix3<f64>, eye: &Vector3<f64>, bounds: &Aabb) -> Vec<usize> {
    use std::f64::consts::PI;
    let n = model.azimuth_bins();
    let all = || (0..n).collect();
    let rt = r.transpose();
    let mut az = Vec::with_capacity(8);
    for i in 0..8 {
        let c = Vector3::new(
            if i & 1 == 0 { bounds.min.x } else { bounds.max.x },
            if i & 2 == 0 { bounds.min.y } else { bounds.max.y },
            if i & 4 == 0 { bounds.min.z } else { bounds.max.z },
        );
        let s = rt * (c - eye);
        if s.x.hypot(s.y) < 1e-9 {
            return all();
        }
        az.push(s.y.atan2(s.x).rem_euclid(2.0 * PI));
    }
    az.sort_by(f64::total_cmp);
    // The largest circular gap between corner azimuths is the part of the
    // circle the box does not cover.
    let mut gap = (az[0] + 2.0 * PI - az[7], 7);
    for i in 0..7 {
        if az[i + 1] - az[i] > gap.0 {
            gap = (az[i + 1] - az[i], i);
        }
    }
    if gap.0 <= PI {
        return all();
    }
    let start = az[(gap.1 + 1) % 8];
    let span = 2.0 * PI - gap.0;
    let step = model.azimuth_step();
    let first = (start / step).floor() as i64 - 1;
    let last = ((start + span) / step).ceil() as i64 + 1;
    if last - first + 1 >= n as i64 {
        return all();
    }
    let mut bins: Vec<usize> = (first..=last).map(|b| b.rem_euclid(n as i64) as usize).collect();
    bins.sort_unstable();
    bins.dedup();
    bins
}

fn ray_hits_box(b: &Aabb, origin: &Vector3<f64>, dir: &Vector3<f64>, max: f64) -> bool {
    let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
    b.ray_entry(origin, &inv, max).is_some()
}
