//! Pipeline configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxelcap::tracker::{AnnealSchedule, SampleCounts, DEFAULT_PARTICLES};
use voxelcap::{FusionParams, ParallelConfig, VolumeOfInterest, POSE_DOF};

use crate::CliError;

/// Where tracking starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPose {
    /// Frame 0 of the dataset's `truth/poses.csv`.
    Truth,
    Pose(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub dataset: PathBuf,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub voi: VolumeOfInterest,
    #[serde(default)]
    pub fusion: FusionParams,
    /// Lower bound on the background deviation (gray levels).
    #[serde(default = "default_sigma_floor")]
    pub sigma_floor: f64,
    /// A view colors a voxel only where its SLM exceeds this.
    #[serde(default = "default_color_gate")]
    pub color_gate: f64,
    #[serde(default)]
    pub schedule: AnnealSchedule,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default)]
    pub samples: SampleCounts,
    #[serde(default)]
    pub parallel: ParallelConfig,
    #[serde(default = "default_initial_pose")]
    pub initial_pose: InitialPose,
    /// Process only the first `frames` frames.
    #[serde(default)]
    pub frames: Option<usize>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_sigma_floor() -> f64 {
    voxelcap::silhouette::DEFAULT_SIGMA_FLOOR
}

fn default_color_gate() -> f64 {
    0.5
}

fn default_particles() -> usize {
    DEFAULT_PARTICLES
}

fn default_initial_pose() -> InitialPose {
    InitialPose::Truth
}

impl PipelineConfig {
    /// Parses a JSON config; relative paths are resolved against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.dataset = base.join(&cfg.dataset);
        cfg.output = base.join(&cfg.output);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.voi.validate().map_err(|e| CliError::Config(format!("voi: {e}")))?;
        self.fusion.validate().map_err(|e| CliError::Config(format!("fusion: {e}")))?;
        self.schedule
            .validate()
            .map_err(|e| CliError::Config(format!("schedule: {e}")))?;
        if self.schedule.sigma_base.len() != POSE_DOF {
            return bad(format!("schedule.sigma_base needs {POSE_DOF} values"));
        }
        if self.particles == 0 {
            return bad("particles must be positive".into());
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.color_gate) {
            return bad("color_gate must lie in [0, 1)".into());
        }
        if let InitialPose::Pose(p) = &self.initial_pose {
            if p.len() != POSE_DOF {
                return bad(format!("initial_pose.pose needs {POSE_DOF} values, found {}", p.len()));
            }
        }
        if !self.dataset.is_dir() {
            return bad(format!("dataset directory {} does not exist", self.dataset.display()));
        }
        Ok(())
    }
}
