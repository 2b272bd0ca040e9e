//! The `scenemo` command line.
//!
//! Every subcommand resolves its settings as built-in defaults, overlaid by
//! the config file (`--config` or `$SCENEMO_CONFIG`), overlaid by flags.
//! Failures exit nonzero with one JSON object on stderr:
//! `{"error": "<kind>", "message": "<text>"}`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scenemo::metrics::Prealign;
use scenemo::sim::MotionKind;
use scenemo::Error;

pub use config::{ToolConfig, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(name = "scenemo", version, about = "Scene-aware motion refinement toolkit")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Config file (TOML or JSON).
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a capture and write it as a sequence container.
    Simulate(SimulateArgs),
    /// Align motion streams by their jump peaks and resample them.
    Sync(SyncArgs),
    /// Trajectory or camera calibration.
    #[command(subcommand)]
    Calibrate(CalibrateCommand),
    /// Refine the container's motion estimate against its scene and sweeps.
    Optimize(OptimizeArgs),
    /// Refine per-frame camera extrinsics from 2D detections.
    RefineCamera(RefineCameraArgs),
    /// Compare a predicted container against a ground-truth container.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MotionArg {
    Walk,
    Run,
    JumpBracketed,
}

impl From<MotionArg> for MotionKind {
    fn from(m: MotionArg) -> Self {
        match m {
            MotionArg::Walk => MotionKind::Walk,
            MotionArg::Run => MotionKind::Run,
            MotionArg::JumpBracketed => MotionKind::JumpBracketed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrealignArg {
    None,
    Rigid,
    Similarity,
}

impl From<PrealignArg> for Prealign {
    fn from(p: PrealignArg) -> Self {
        match p {
            PrealignArg::None => Prealign::None,
            PrealignArg::Rigid => Prealign::Rigid,
            PrealignArg::Similarity => Prealign::Similarity,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum MotionField {
    Estimate,
    GroundTruth,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output container directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the inertial drift noise.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub motion: Option<MotionArg>,
    /// Seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Frame rate, Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Jumps per bracket of a jump-bracketed motion.
    #[arg(long)]
    pub jumps: Option<usize>,
    /// Translation drift along x, m/s.
    #[arg(long)]
    pub drift_bias: Option<f64>,
    /// Per-joint orientation noise, radians.
    #[arg(long)]
    pub orient_noise: Option<f64>,
    /// Skip the camera.
    #[arg(long)]
    pub no_camera: bool,
    /// Also write `streams/lidar.json` (ground truth at the frame rate) and
    /// `streams/imu.json` (drifted motion at this rate, on a shifted clock).
    #[arg(long)]
    pub imu_rate: Option<f64>,
    /// Clock offset of the exported inertial stream, seconds.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub imu_clock_offset: f64,
}

#[derive(Debug, Args)]
pub struct SyncArgs {
    /// Motion stream files; the first is the reference clock.
    #[arg(long = "stream", required = true, num_args = 1)]
    pub streams: Vec<PathBuf>,
    /// Manual peaks: JSON list of `{"stream_id", "timestamp"}`. Streams
    /// listed here skip automatic detection.
    #[arg(long)]
    pub peaks: Option<PathBuf>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub min_prominence: Option<f64>,
    #[arg(long)]
    pub min_separation: Option<f64>,
    /// Stream stored as the container's estimate (default: the second one).
    #[arg(long)]
    pub estimate: Option<String>,
    /// Stream stored as the container's ground truth.
    #[arg(long)]
    pub ground_truth: Option<String>,
    /// Output container directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CalibrateCommand {
    /// Planar rigid alignment of an inertial trajectory onto a LiDAR one.
    Trajectory(CalibTrajectoryArgs),
    /// Camera pose from 3D-2D correspondences.
    Pnp(CalibPnpArgs),
}

#[derive(Debug, Args)]
pub struct CalibTrajectoryArgs {
    /// Inertial trajectory CSV (`t,x,y,z`).
    #[arg(long)]
    pub imu: PathBuf,
    /// LiDAR trajectory CSV, same length.
    #[arg(long)]
    pub lidar: PathBuf,
    /// Output calibration JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibPnpArgs {
    /// JSON with `intrinsics`, `world` (`[[x,y,z]]`) and `pixels` (`[[u,v]]`).
    #[arg(long)]
    pub correspondences: PathBuf,
    /// Output camera JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output container directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Report path (default `<out>/optim_report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub window_k: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub lambda_trans: Option<f64>,
    #[arg(long)]
    pub lambda_orit: Option<f64>,
    #[arg(long)]
    pub lambda_jts: Option<f64>,
    #[arg(long)]
    pub lambda_sc: Option<f64>,
    #[arg(long)]
    pub lambda_pri: Option<f64>,
    #[arg(long)]
    pub lambda_m2p: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RefineCameraArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Initial camera JSON; a single extrinsic is used for every frame.
    /// Defaults to the container's camera.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Pose the body from this motion.
    #[arg(long, value_enum, default_value = "estimate")]
    pub motion: MotionField,
    /// Output JSON with the refined camera and per-frame results.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lambda_kpt: Option<f64>,
    #[arg(long)]
    pub lambda_box: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub temporal_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value = "estimate")]
    pub pred_field: MotionField,
    #[arg(long, value_enum, default_value = "ground-truth")]
    pub gt_field: MotionField,
    /// Output directory for `metrics.json` and `per_frame.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub root_align: Option<bool>,
    #[arg(long, value_enum)]
    pub prealign: Option<PrealignArg>,
    /// RPE interval, seconds.
    #[arg(long)]
    pub rpe_delta: Option<f64>,
}

fn report_error(kind: &str, message: &str) {
    let v = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{v}");
}

/// Parse `argv` (including the program name) and run it. Returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_error("usage", e.to_string().trim());
            return 2;
        }
    };
    if cli.threads > 0 {
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            1
        }
    }
}

/// Shorthand for user-facing input errors.
pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
