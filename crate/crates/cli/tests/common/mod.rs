#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use voxelcap_cli::{cmd_synth, PipelineConfig};

pub const SPHERE_CENTER: [f64; 3] = [0.0, 0.0, 1000.0];
pub const SPHERE_RADIUS: f64 = 300.0;

/// Scene script with a static sphere seen by `cameras` ring cameras.
pub fn sphere_script(cameras: usize, frames: usize) -> String {
    format!(
        r#"{{
  "rig": {{"n_cameras": {cameras}, "radius": 3000, "height": 1000, "look_at": [0, 0, 1000],
          "focal": 500, "image_width": 240, "image_height": 180}},
  "motion": {{"type": "sphere", "center": [0, 0, 1000], "radius": {SPHERE_RADIUS}}},
  "noise_sigma": 3,
  "frames": {frames},
  "background_frames": 3,
  "seed": 5
}}"#
    )
}

/// Small arm-wave scene for tracking tests.
pub fn body_script(frames: usize) -> String {
    format!(
        r#"{{
  "rig": {{"n_cameras": 3, "radius": 3500, "height": 1200, "look_at": [0, 0, 900],
          "focal": 200, "image_width": 160, "image_height": 120}},
  "motion": {{"type": "arm_wave", "amplitude": 0.5, "frequency": 0.1}},
  "noise_sigma": 3,
  "frames": {frames},
  "background_frames": 3,
  "seed": 2
}}"#
    )
}

pub fn write(path: &Path, text: &str) -> PathBuf {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).unwrap();
    }
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

/// Generates a dataset under `dir/data` from `script`.
pub fn synth(dir: &Path, script: &str) -> PathBuf {
    let script_path = write(&dir.join("script.json"), script);
    let data = dir.join("data");
    cmd_synth(&script_path, &data, None).unwrap();
    data
}

/// Config for the body scenes: 40 mm voxels around a standing figure.
pub fn body_config(extra: &str) -> String {
    format!(
        r#"{{
  "dataset": "data",
  "output": "out",
  "voi": {{"origin": [-900, -400, 0], "spacing": 40, "dims": [45, 20, 44]}},
  "particles": 24,
  "schedule": {{"layers": 3, "seed": 7}}{extra}
}}"#
    )
}

pub fn sphere_config(spacing: f64) -> String {
    let n = (720.0 / spacing).round() as usize;
    format!(
        r#"{{
  "dataset": "data",
  "output": "out",
  "voi": {{"origin": [-360, -360, 640], "spacing": {spacing}, "dims": [{n}, {n}, {n}]}}
}}"#
    )
}

pub fn load(dir: &Path, config: &str) -> PipelineConfig {
    let p = write(&dir.join("config.json"), config);
    PipelineConfig::load(&p).unwrap()
}
