use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::Vector3;
use serde_json::Value;

use scenemo::calib::PlanarTransform;
use scenemo::camera::{CameraModel, Extrinsic, Intrinsics};
use scenemo::metrics::Trajectory;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_scenemo"));
    c.env_remove("SCENEMO_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn scenemo")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON object")
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(files(&p));
        } else {
            v.push(p);
        }
    }
    v.sort();
    v
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", s(dir), "--duration", "2"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn simulate_is_deterministic_under_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    simulate(&a, &["--seed", "7"]);
    simulate(&b, &["--seed", "7"]);
    simulate(&c, &["--seed", "8"]);
    let fa = files(&a);
    let fb = files(&b);
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() > 5);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{} differs", x.display());
    }
    assert_ne!(fs::read(a.join("frames.json")).unwrap(), fs::read(c.join("frames.json")).unwrap());
    let m = json(&a.join("manifest.json"));
    assert_eq!(m["provenance"]["seed"], 7);
    assert_eq!(m["coordinate_convention"], "z-up, meters");
}

#[test]
fn evaluate_identical_motion_gives_zero_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let ev = tmp.path().join("ev");
    simulate(&sim, &["--seed", "1"]);
    ok(&["evaluate", "--pred", s(&sim), "--gt", s(&sim), "--pred-field", "ground-truth", "--out", s(&ev)]);
    let m = json(&ev.join("metrics.json"));
    for k in ["mpjpe_mm", "pa_mpjpe_mm", "g_mpjpe_mm"] {
        assert_eq!(m[k].as_f64().unwrap(), 0.0, "{k}");
    }
    for k in ["rmse", "mean", "std", "max"] {
        assert_eq!(m["ate_m"][k].as_f64().unwrap(), 0.0, "ate {k}");
        assert_eq!(m["rpe_m"][k].as_f64().unwrap(), 0.0, "rpe {k}");
    }
    let csv = fs::read_to_string(ev.join("per_frame.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "frame,time,mpjpe_mm,pa_mpjpe_mm,g_mpjpe_mm,ate_m");
    assert_eq!(rows.len(), 1 + m["frames"].as_u64().unwrap() as usize);

    // The drifted estimate is measurably off.
    ok(&["evaluate", "--pred", s(&sim), "--gt", s(&sim), "--out", s(&ev)]);
    let m = json(&ev.join("metrics.json"));
    assert!(m["g_mpjpe_mm"].as_f64().unwrap() > 1.0);
}

fn print_config(env: Option<&Path>, args: &[&str]) -> Value {
    let mut c = bin();
    if let Some(p) = env {
        c.env("SCENEMO_CONFIG", p);
    }
    let mut full = vec!["--print-config"];
    full.extend_from_slice(args);
    let out = c.args(&full).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn flags_override_config_file_overrides_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("cfg.toml");
    fs::write(&file, "[optimize]\nwindow_k = 30\nmax_iters = 7\n\n[optimize.loss.weights]\nm2p = 5.0\n").unwrap();
    let other = tmp.path().join("other.json");
    fs::write(&other, r#"{"optimize": {"window_k": 25}}"#).unwrap();
    let base = ["optimize", "--input", "in", "--out", "out"];

    let d = print_config(None, &base);
    assert_eq!(d["optimize"]["window_k"], 40);
    assert_eq!(d["optimize"]["max_iters"], 300);
    assert_eq!(d["optimize"]["loss"]["weights"]["m2p"], 100.0);

    let mut with_file = vec!["--config", s(&file)];
    with_file.extend_from_slice(&base);
    let f = print_config(None, &with_file);
    assert_eq!(f["optimize"]["window_k"], 30);
    assert_eq!(f["optimize"]["max_iters"], 7);
    assert_eq!(f["optimize"]["loss"]["weights"]["m2p"], 5.0);
    assert_eq!(f["optimize"]["window_overlap"], 10);

    let mut flagged = with_file.clone();
    flagged.extend_from_slice(&["--window-k", "20", "--lambda-m2p", "1.5"]);
    let g = print_config(None, &flagged);
    assert_eq!(g["optimize"]["window_k"], 20);
    assert_eq!(g["optimize"]["loss"]["weights"]["m2p"], 1.5);
    assert_eq!(g["optimize"]["max_iters"], 7);

    // The environment supplies the default path; an explicit flag wins.
    let e = print_config(Some(&file), &base);
    assert_eq!(e["optimize"]["window_k"], 30);
    let mut explicit = vec!["--config", s(&other)];
    explicit.extend_from_slice(&base);
    let x = print_config(Some(&file), &explicit);
    assert_eq!(x["optimize"]["window_k"], 25);
    assert_eq!(x["optimize"]["max_iters"], 300);
}

#[test]
fn failures_are_machine_readable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["optimize", "--input", s(&tmp.path().join("none")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "missing_file");
    assert!(e["message"].as_str().unwrap().contains("manifest.json"));

    let out = run(&["evaluate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");

    let sim = tmp.path().join("sim");
    simulate(&sim, &["--no-camera"]);
    let manifest = sim.join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
    fs::write(&manifest, text).unwrap();
    let out = run(&["evaluate", "--pred", s(&sim), "--gt", s(&sim), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "version");

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[optimize]\nno_such_key = 1\n").unwrap();
    let out = run(&["--config", s(&bad), "--print-config", "optimize", "--input", "a", "--out", "b"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "parse");
}

#[test]
fn sync_recovers_clock_offset() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let out = tmp.path().join("sync");
    ok(&[
        "--threads", "2", "simulate", "--out", s(&sim), "--motion", "jump-bracketed", "--duration", "12", "--jumps", "2",
        "--no-camera", "--imu-rate", "100", "--imu-clock-offset", "0.123",
    ]);
    let lidar = sim.join("streams/lidar.json");
    let imu = sim.join("streams/imu.json");
    ok(&["sync", "--stream", s(&lidar), "--stream", s(&imu), "--ground-truth", "lidar", "--out", s(&out)]);
    let r = json(&out.join("sync.json"));
    assert_eq!(r["offsets"][0], 0.0);
    let off = r["offsets"][1].as_f64().unwrap();
    assert!((off - 0.123).abs() < 0.025, "offset {off}");
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["rate_hz"], 20.0);

    // Manual peaks replace detection for the streams they name.
    let peaks = tmp.path().join("peaks.json");
    let lp = r["peaks"][0].as_array().unwrap();
    let list: Vec<Value> = lp
        .iter()
        .map(|t| serde_json::json!({"stream_id": "imu", "timestamp": t.as_f64().unwrap() + 0.5}))
        .collect();
    fs::write(&peaks, serde_json::to_string(&list).unwrap()).unwrap();
    ok(&["sync", "--stream", s(&lidar), "--stream", s(&imu), "--peaks", s(&peaks), "--out", s(&out)]);
    let r = json(&out.join("sync.json"));
    assert!((r["offsets"][1].as_f64().unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn calibrate_trajectory_recovers_planar_transform() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = PlanarTransform { yaw: 0.4, translation: [1.5, -2.0] };
    let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
    let imu: Vec<Vector3<f64>> = t.iter().map(|&x| Vector3::new(x, (x * 0.7).sin(), 0.9)).collect();
    let lidar: Vec<Vector3<f64>> = imu.iter().map(|p| truth.apply3(p)).collect();
    let (ip, lp, op) = (tmp.path().join("imu.csv"), tmp.path().join("lidar.csv"), tmp.path().join("calib.json"));
    Trajectory::new(t.clone(), imu).unwrap().save_csv(&ip).unwrap();
    Trajectory::new(t, lidar).unwrap().save_csv(&lp).unwrap();
    ok(&["calibrate", "trajectory", "--imu", s(&ip), "--lidar", s(&lp), "--out", s(&op)]);
    let r = json(&op);
    assert!((r["r_wi"]["yaw"].as_f64().unwrap() - 0.4).abs() < 1e-9);
    assert!((r["r_wi"]["translation"][0].as_f64().unwrap() - 1.5).abs() < 1e-9);
    assert!(r["residual"].as_f64().unwrap() < 1e-9);
    assert_eq!(r["degenerate"], false);
}

#[test]
fn calibrate_pnp_and_refine_camera() {
    let tmp = tempfile::tempdir().unwrap();
    let k = Intrinsics::default();
    let truth = Extrinsic::look_at(&Vector3::new(-4.0, 1.0, 1.5), &Vector3::new(0.0, 0.0, 0.8), &Vector3::z()).unwrap();
    let world: Vec<[f64; 3]> = (0..12)
        .map(|i| {
            let a = i as f64;
            [(a * 0.9).sin() * 0.8, (a * 1.7).cos() * 0.8, 0.2 + 0.12 * a]
        })
        .collect();
    let pixels: Vec<[f64; 2]> = world
        .iter()
        .map(|p| {
            let px = k.project_camera(&truth.transform(&Vector3::from(*p))).unwrap();
            [px.x, px.y]
        })
        .collect();
    let corr = tmp.path().join("corr.json");
    fs::write(&corr, serde_json::json!({"intrinsics": k, "world": world, "pixels": pixels}).to_string()).unwrap();
    let cam_path = tmp.path().join("camera.json");
    let out = ok(&["calibrate", "pnp", "--correspondences", s(&corr), "--out", s(&cam_path)]);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["rmse"].as_f64().unwrap() < 1e-6);
    let cam: CameraModel = serde_json::from_str(&fs::read_to_string(&cam_path).unwrap()).unwrap();
    assert!((cam.extrinsics[0].center() - truth.center()).norm() < 1e-6);

    // Perturb the simulated rig and let refine-camera pull it back.
    let sim = tmp.path().join("sim");
    simulate(&sim, &["--seed", "2"]);
    let rig: CameraModel = serde_json::from_str(&fs::read_to_string(sim.join("camera.json")).unwrap()).unwrap();
    let mut init = rig.clone();
    for e in &mut init.extrinsics {
        e.translation += Vector3::new(0.05, -0.04, 0.08);
        e.rotation += Vector3::new(0.01, -0.01, 0.005);
    }
    let init_path = tmp.path().join("init.json");
    fs::write(&init_path, serde_json::to_string(&init).unwrap()).unwrap();
    let refined = tmp.path().join("refined.json");
    ok(&[
        "refine-camera", "--input", s(&sim), "--camera", s(&init_path), "--motion", "ground-truth", "--out", s(&refined),
    ]);
    let r = json(&refined);
    let got: CameraModel = serde_json::from_value(r["camera"].clone()).unwrap();
    assert_eq!(got.extrinsics.len(), rig.extrinsics.len());
    let mut worst: f64 = 0.0;
    for (g, t) in got.extrinsics.iter().zip(&rig.extrinsics) {
        worst = worst.max((g.translation - t.translation).norm());
    }
    assert!(worst < 0.01, "worst translation error {worst}");
}

#[test]
fn optimize_writes_container_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let out = tmp.path().join("opt");
    simulate(&sim, &["--seed", "4", "--no-camera"]);
    ok(&["optimize", "--input", s(&sim), "--out", s(&out), "--window-k", "20", "--overlap", "5", "--max-iters", "5"]);
    let r = json(&out.join("optim_report.json"));
    assert_eq!(r["config"]["window_k"], 20);
    let windows = r["report"]["windows"].as_array().unwrap();
    assert!(!windows.is_empty());
    for w in windows {
        assert!(w["final"]["total"].as_f64().unwrap() <= w["initial"]["total"].as_f64().unwrap());
    }
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["provenance"]["config_hash"], r["config_hash"]);
    assert_eq!(m["frame_count"], json(&sim.join("manifest.json"))["frame_count"]);
}
