//! Per-stage timing across worker counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::pipeline::run_track;
use crate::CliError;

pub const RUNS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    /// Requested worker count.
    pub workers: usize,
    /// After the environment override and auto-detection.
    pub effective_workers: usize,
    /// Mean seconds per frame of each run, by stage.
    pub samples: BTreeMap<String, Vec<f64>>,
    /// Mean of `samples`, by stage.
    pub mean: BTreeMap<String, f64>,
    /// `mean` at one worker divided by `mean` here, by stage.
    pub speedup: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: usize,
    pub frames: usize,
    pub entries: Vec<BenchEntry>,
}

pub const TOTAL: &str = "total";

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `base / value`, with two zero timings counting as equal.
pub fn speedup(base: f64, value: f64) -> f64 {
    if base == value {
        1.0
    } else {
        base / value
    }
}

/// Runs the in-memory reconstruct + track pipeline [`RUNS`] times per
/// worker count. A one-worker baseline is added when missing.
pub fn run_bench(cfg: &PipelineConfig, workers: &[usize]) -> Result<BenchReport, CliError> {
    let mut counts = workers.to_vec();
    if !counts.contains(&1) {
        counts.insert(0, 1);
    }
    let mut frames = 0;
    let mut entries: Vec<BenchEntry> = Vec::new();
    for &w in &counts {
        if w == 0 {
            return Err(CliError::Config("worker counts must be positive".into()));
        }
        let mut run_cfg = cfg.clone();
        run_cfg.parallel.workers = w;
        run_cfg.output = cfg.output.join("bench_scratch");
        let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for run in 0..RUNS {
            let report = run_track(&run_cfg, true)?;
            frames = report.frames.len();
            if frames == 0 {
                return Err(CliError::Config("benchmark dataset has no frames".into()));
            }
            log::info!("bench: {w} workers, run {run}");
            // Setup cost is spread over the frames.
            let mut per_stage: BTreeMap<String, f64> = report.setup.0.clone();
            *per_stage.entry(TOTAL.into()).or_default() += report.setup.total();
            for f in &report.frames {
                for (k, v) in &f.stages.0 {
                    *per_stage.entry(k.clone()).or_default() += v;
                }
                *per_stage.entry(TOTAL.into()).or_default() += f.stages.total();
            }
            for (k, v) in per_stage {
                samples.entry(k).or_default().push(v / frames as f64);
            }
        }
        let means: BTreeMap<String, f64> = samples.iter().map(|(k, v)| (k.clone(), mean(v))).collect();
        entries.push(BenchEntry {
            workers: w,
            effective_workers: run_cfg.parallel.effective_workers(),
            samples,
            mean: means,
            speedup: BTreeMap::new(),
        });
    }
    let base = entries
        .iter()
        .find(|e| e.workers == 1)
        .expect("a one-worker entry is always present")
        .mean
        .clone();
    for e in &mut entries {
        e.speedup = e
            .mean
            .iter()
            .map(|(k, v)| (k.clone(), speedup(base[k], *v)))
            .collect();
    }
    std::fs::remove_dir_all(cfg.output.join("bench_scratch")).ok();
    Ok(BenchReport {
        runs: RUNS,
        frames,
        entries,
    })
}

/// Fixed-width table: one row per stage, one column pair per worker count.
pub fn format_table(report: &BenchReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = write!(s, "{:<14}", "stage (s/frame)");
    for e in &report.entries {
        let _ = write!(s, " {:>12} {:>8}", format!("{}w mean", e.workers), "speedup");
    }
    s.push('\n');
    let stages: Vec<&String> = report.entries[0].mean.keys().collect();
    for st in stages {
        let _ = write!(s, "{st:<14}");
        for e in &report.entries {
            let _ = write!(s, " {:>12.6} {:>8.2}", e.mean[st], e.speedup[st]);
        }
        s.push('\n');
    }
    s
}
