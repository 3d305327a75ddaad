//! Run configuration: one strict document per invocation, covering every
//! pipeline stage. Unknown keys are rejected at every level so a typo in a
//! tuning constant fails loudly instead of silently using the default.
//!
//! The types here are plain serde structures; the command-line front end
//! parses them from TOML and snapshots the effective configuration into the
//! run directory.

use crate::camera::CameraIntrinsics;
use crate::dce::{DatasetConfig, DceConfig};
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

/// Dataset generation stage: how many samples to render and through which
/// camera. The held-out slice is rendered from a disjoint seed stream and
/// never trains the encoder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_train: usize,
    pub n_heldout: usize,
    pub camera: CameraIntrinsics,
    /// Robot box (depth, width, height) in meters for the collision remap.
    pub robot_dims: [f64; 3],
    pub gen: DatasetConfig,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_heldout: 200,
            camera: CameraIntrinsics::new(96, 72, 87.0),
            robot_dims: [0.43, 0.43, 0.25],
            gen: DatasetConfig::default(),
        }
    }
}

/// Evaluation stage: which levels, how many runs each, and where the
/// trained artifacts live. Paths resolve relative to the working directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub levels: Vec<u32>,
    pub runs_per_level: usize,
    pub policy_checkpoint: String,
    pub dce_checkpoint: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            levels: vec![0, 1, 2, 3, 4, 5],
            runs_per_level: 100,
            policy_checkpoint: String::new(),
            dce_checkpoint: String::new(),
        }
    }
}

/// Latency measurement stage: frames to time after warmup.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub frames: usize,
    pub warmup: usize,
    pub camera: CameraIntrinsics,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            frames: 50,
            warmup: 5,
            camera: CameraIntrinsics::default_desk(),
        }
    }
}

/// Debug rendering stage: one seeded scene dumped as raster files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub level: u32,
    pub camera: CameraIntrinsics,
    pub robot_dims: [f64; 3],
    /// Optional DCE checkpoint; when present the reconstruction raster is
    /// emitted next to the depth and collision images.
    pub dce_checkpoint: String,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            level: 5,
            camera: CameraIntrinsics::new(96, 72, 87.0),
            robot_dims: [0.43, 0.43, 0.25],
            dce_checkpoint: String::new(),
        }
    }
}

/// The complete run configuration. Every section has workable defaults, so
/// an empty document is valid and each subcommand reads only its own parts.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub dce: DceConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub render: RenderSection,
}
