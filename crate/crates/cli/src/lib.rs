//! Command-line pipeline driver for voxelcap.
//!
//! Subcommands map one to one onto the functions in this crate:
//! [`cmd_synth`], [`cmd_reconstruct`], [`cmd_track`] and [`cmd_bench`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod dataset;
pub mod pipeline;

use std::path::{Path, PathBuf};

use thiserror::Error;
use voxelcap::synth::{generate_sequence, DatasetSummary, SceneScript};
use voxelcap::ParallelConfig;

pub use bench::{run_bench, BenchReport};
pub use config::{InitialPose, PipelineConfig};
pub use dataset::Dataset;
pub use pipeline::{run_reconstruct, run_track, ReconstructReport, TrackReport};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRACKING_LOST: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("tracking lost at frame {frame} and could not be recovered")]
    TrackingLost { frame: usize },
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: voxelcap::Error,
    },
    #[error(transparent)]
    Core(#[from] voxelcap::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<voxelcap::image::ImageError> for CliError {
    fn from(e: voxelcap::image::ImageError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::TrackingLost { .. } => EXIT_TRACKING_LOST,
            _ => 1,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

fn load_config(path: &Path, o: &Overrides) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(out) = &o.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.schedule.seed = seed;
    }
    if let Some(w) = o.workers {
        cfg.parallel.workers = w;
    }
    Ok(cfg)
}

/// Generates the dataset described by the script at `script_path`.
pub fn cmd_synth(script_path: &Path, out: &Path, seed: Option<u64>) -> Result<DatasetSummary, CliError> {
    let text = std::fs::read_to_string(script_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", script_path.display())))?;
    let mut script = SceneScript::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = seed {
        script.seed = s;
    }
    let dir = script_path.parent().unwrap_or(Path::new("."));
    generate_sequence(&script, dir, out, &ParallelConfig::default()).map_err(|e| match e {
        voxelcap::synth::SynthError::Script(m) => CliError::Config(m),
        voxelcap::synth::SynthError::Body(b) => CliError::Config(b.to_string()),
        other => CliError::Core(other.into()),
    })
}

pub fn cmd_reconstruct(config: &Path, o: &Overrides) -> Result<ReconstructReport, CliError> {
    run_reconstruct(&load_config(config, o)?)
}

pub fn cmd_track(config: &Path, o: &Overrides, pipe: bool) -> Result<TrackReport, CliError> {
    run_track(&load_config(config, o)?, pipe)
}

/// Runs the benchmark and writes `bench.json` to the output directory.
pub fn cmd_bench(config: &Path, o: &Overrides, workers: &[usize]) -> Result<BenchReport, CliError> {
    let cfg = load_config(config, o)?;
    let report = run_bench(&cfg, workers)?;
    std::fs::create_dir_all(&cfg.output).map_err(CliError::io(&cfg.output))?;
    let path = cfg.output.join("bench.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, json + "\n").map_err(CliError::io(&path))?;
    Ok(report)
}
