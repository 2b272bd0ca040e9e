//! Layered tool configuration: built-in defaults, then an optional config
//! file, then command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use scenemo::camera::CameraOptConfig;
use scenemo::io::load_config;
use scenemo::metrics::EvalOptions;
use scenemo::optim::OptimConfig;
use scenemo::sim::SimConfig;
use scenemo::Result;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "SCENEMO_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSettings {
    pub target_hz: f64,
    /// Minimum peak prominence of the root height, meters.
    pub min_prominence: f64,
    /// Minimum spacing between accepted peaks, seconds.
    pub min_separation: f64,
}

impl Default for SyncSettings {
    fn default() -> Self {
        Self { target_hz: 20.0, min_prominence: 0.1, min_separation: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub simulate: SimConfig,
    pub sync: SyncSettings,
    pub optimize: OptimConfig,
    pub refine_camera: CameraOptConfig,
    pub evaluate: EvalOptions,
}

impl ToolConfig {
    /// Defaults, overlaid by `path` when given. Missing sections and fields
    /// keep their defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => load_config(p),
            None => Ok(Self::default()),
        }
    }
}
