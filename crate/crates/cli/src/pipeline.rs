//! Reconstruction and tracking drivers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use voxelcap::bodymodel::pose_csv_row;
use voxelcap::tracker::{initial_set, FrameResult, LayerStats, SsdObjective, TrackError};
use voxelcap::voxelgrid::{read_ply, write_occupancy, write_ply};
use voxelcap::{
    apf_frame, build_measurement, color_voxels, compute_slm, extract_surface, fuse_occupancy,
    reproject_voxels, smooth_and_threshold, train_background, BackgroundModel, OccupancyGrid,
    ParticleSet, PoseVector, VoxelCloud,
};

use crate::config::{InitialPose, PipelineConfig};
use crate::dataset::Dataset;
use crate::CliError;

/// Wall-clock seconds per named stage, from a monotonic clock.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes(pub BTreeMap<String, f64>);

impl StageTimes {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    pub fn add(&mut self, other: &StageTimes) {
        for (k, v) in &other.0 {
            *self.0.entry(k.clone()).or_default() += v;
        }
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }
}

pub fn cloud_path(out: &Path, t: usize) -> PathBuf {
    out.join(format!("clouds/f{t}.ply"))
}

pub fn occupancy_path(out: &Path, t: usize) -> PathBuf {
    out.join(format!("occupancy/f{t}.voxf32"))
}

fn core<E: Into<voxelcap::Error>>(frame: usize) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Frame {
        frame,
        source: e.into(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, text).map_err(CliError::io(path))
}

/// Per-frame reconstruction with the background models trained once.
pub struct Reconstructor<'a> {
    pub dataset: &'a Dataset,
    pub cfg: &'a PipelineConfig,
    models: Vec<BackgroundModel>,
}

pub struct FrameReconstruction {
    pub grid: OccupancyGrid,
    pub cloud: VoxelCloud,
}

impl<'a> Reconstructor<'a> {
    pub fn new(dataset: &'a Dataset, cfg: &'a PipelineConfig, times: &mut StageTimes) -> Result<Self, CliError> {
        if dataset.backgrounds == 0 {
            return Err(CliError::Config(format!(
                "dataset {} has no background frames",
                dataset.root.display()
            )));
        }
        let models = times.time("background", || {
            (0..dataset.rig.len())
                .map(|k| {
                    let frames = dataset.backgrounds(k)?;
                    train_background(k, &frames, cfg.sigma_floor)
                        .map_err(|e| CliError::Core(e.into()))
                })
                .collect::<Result<Vec<_>, CliError>>()
        })?;
        Ok(Self { dataset, cfg, models })
    }

    pub fn frame(&self, t: usize, times: &mut StageTimes) -> Result<FrameReconstruction, CliError> {
        let par = &self.cfg.parallel;
        let images = times.time("io", || self.dataset.frame(t))?;
        let slms = times.time("silhouette", || {
            self.models
                .iter()
                .zip(&images)
                .map(|(m, img)| compute_slm(m, img, par))
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(core(t))?;
        let rig = &self.dataset.rig;
        let grid = times
            .time("fusion", || fuse_occupancy(&self.cfg.voi, rig, &slms, &self.cfg.fusion, par))
            .map_err(core(t))?;
        let volume = times.time("smoothing", || smooth_and_threshold(&grid, &self.cfg.fusion, par));
        let surface = times.time("surface", || extract_surface(&volume));
        let cloud = times
            .time("coloring", || color_voxels(&surface, rig, &images, &slms, self.cfg.color_gate, par))
            .map_err(core(t))?;
        Ok(FrameReconstruction { grid, cloud })
    }
}

fn frame_count(dataset: &Dataset, cfg: &PipelineConfig) -> usize {
    let n = cfg.frames.map_or(dataset.frames, |f| f.min(dataset.frames));
    if n == 0 {
        log::warn!("dataset {} has no frames", dataset.root.display());
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub frames: usize,
    pub workers: usize,
    pub voxels: Vec<usize>,
    /// Seconds summed over all frames.
    pub stages: StageTimes,
    pub per_frame: Vec<StageTimes>,
}

/// Writes `clouds/f<t>.ply`, `occupancy/f<t>.voxf32` and
/// `reconstruct_timing.json` under the output directory.
pub fn run_reconstruct(cfg: &PipelineConfig) -> Result<ReconstructReport, CliError> {
    let dataset = Dataset::open(&cfg.dataset)?;
    let n = frame_count(&dataset, cfg);
    let mut stages = StageTimes::default();
    std::fs::create_dir_all(&cfg.output).map_err(CliError::io(&cfg.output))?;
    let mut report = ReconstructReport {
        frames: n,
        workers: cfg.parallel.effective_workers(),
        voxels: Vec::with_capacity(n),
        stages: StageTimes::default(),
        per_frame: Vec::with_capacity(n),
    };
    if n > 0 {
        let recon = Reconstructor::new(&dataset, cfg, &mut stages)?;
        for t in 0..n {
            let mut times = StageTimes::default();
            let r = recon.frame(t, &mut times)?;
            times.time("io", || -> Result<(), CliError> {
                for dir in ["clouds", "occupancy"] {
                    let d = cfg.output.join(dir);
                    std::fs::create_dir_all(&d).map_err(CliError::io(&d))?;
                }
                write_ply(&cloud_path(&cfg.output, t), &r.cloud).map_err(core(t))?;
                write_occupancy(&occupancy_path(&cfg.output, t), &r.grid).map_err(core(t))?;
                Ok(())
            })?;
            log::info!("frame {t}: {} surface voxels", r.cloud.len());
            report.voxels.push(r.cloud.len());
            stages.add(&times);
            report.per_frame.push(times);
        }
    }
    report.stages = stages;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&cfg.output.join("reconstruct_timing.json"), &(json + "\n"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    /// Weighting statistics from the first to the last annealing layer.
    pub layers: Vec<LayerStats>,
    /// The filter lost track and was re-seeded at this frame.
    pub lost: bool,
    pub stages: StageTimes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub workers: usize,
    pub particles: usize,
    pub layers: usize,
    /// One-off work before the first frame, such as background training.
    pub setup: StageTimes,
    pub frames: Vec<FrameDiagnostics>,
    #[serde(skip)]
    pub poses: Vec<PoseVector>,
}

fn initial_pose(cfg: &PipelineConfig, dataset: &Dataset) -> Result<PoseVector, CliError> {
    match &cfg.initial_pose {
        InitialPose::Pose(p) => PoseVector::from_slice(p)
            .ok_or_else(|| CliError::Config("initial_pose.pose has the wrong length".into())),
        InitialPose::Truth => dataset.truth.first().copied().ok_or_else(|| {
            CliError::Config(format!(
                "initial_pose is \"truth\" but {} has no ground-truth poses",
                dataset.root.display()
            ))
        }),
    }
}

/// Tracks every frame. With `pipe`, clouds are reconstructed in memory;
/// otherwise they are read from a previous `reconstruct` run. Writes
/// `poses.csv` and `diagnostics.json`.
pub fn run_track(cfg: &PipelineConfig, pipe: bool) -> Result<TrackReport, CliError> {
    let dataset = Dataset::open(&cfg.dataset)?;
    let n = frame_count(&dataset, cfg);
    let par = &cfg.parallel;
    let sched = &cfg.schedule;
    let mut setup = StageTimes::default();
    let recon = match pipe && n > 0 {
        true => Some(Reconstructor::new(&dataset, cfg, &mut setup)?),
        false => None,
    };
    let start = initial_pose(cfg, &dataset)?;
    let temporal: Vec<f64> = sched.sigma(0).iter().map(|s| s * sched.temporal_multiplier).collect();
    let mut set: ParticleSet = initial_set(start, cfg.particles, &temporal, sched, 0, par);
    let mut last = start;
    let mut report = TrackReport {
        workers: par.effective_workers(),
        particles: cfg.particles,
        layers: sched.layers,
        setup,
        frames: Vec::with_capacity(n),
        poses: Vec::with_capacity(n),
    };
    let mut csv = String::new();
    for t in 0..n {
        let mut times = StageTimes::default();
        let cloud = match &recon {
            Some(r) => r.frame(t, &mut times)?.cloud,
            None => {
                let path = cloud_path(&cfg.output, t);
                times.time("io", || read_ply(&path)).map_err(|e| {
                    CliError::Config(format!("{e} (run `reconstruct` first or pass --pipe)"))
                })?
            }
        };
        let silhouettes = times.time("reprojection", || reproject_voxels(&cloud, &dataset.rig, par));
        let meas = times.time("measurement", || build_measurement(&silhouettes, par));
        let mut objective = SsdObjective::new(&meas, &dataset.body, &dataset.rig).map_err(core(t))?;
        objective.counts = cfg.samples;
        let mut lost = false;
        let result: FrameResult = match times.time("filter", || apf_frame(&set, &objective, sched, t, par)) {
            Ok(r) => r,
            Err(TrackError::TrackingLost { .. }) => {
                // Re-seed around the last estimate with doubled spread.
                log::warn!("tracking lost at frame {t}; re-seeding");
                lost = true;
                let wide: Vec<f64> = sched.sigma(0).iter().map(|s| 2.0 * s).collect();
                let reseeded = initial_set(last, cfg.particles, &wide, sched, t, par);
                times
                    .time("filter", || apf_frame(&reseeded, &objective, sched, t, par))
                    .map_err(|_| CliError::TrackingLost { frame: t })?
            }
            Err(e) => return Err(core(t)(e)),
        };
        last = result.estimate;
        set = result.next;
        csv.push_str(&pose_csv_row(t, &last));
        csv.push('\n');
        report.poses.push(last);
        report.frames.push(FrameDiagnostics {
            frame: t,
            layers: result.layers,
            lost,
            stages: times,
        });
    }
    write_text(&cfg.output.join("poses.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_text(&cfg.output.join("diagnostics.json"), &(json + "\n"))?;
    Ok(report)
}
