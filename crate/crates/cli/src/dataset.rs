//! Reading a dataset directory.

use std::path::{Path, PathBuf};

use voxelcap::bodymodel::{load_body, parse_pose_csv};
use voxelcap::image::read_ppm;
use voxelcap::synth::layout;
use voxelcap::{load_rig, BodyModel, CameraRig, PoseVector, RgbImage};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub rig: CameraRig,
    pub body: BodyModel,
    pub frames: usize,
    pub backgrounds: usize,
    /// Ground-truth poses by frame, when the dataset has them.
    pub truth: Vec<PoseVector>,
}

fn count_contiguous(f: impl Fn(usize) -> PathBuf) -> usize {
    (0..).take_while(|&i| f(i).is_file()).count()
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        let rig = load_rig(&root.join(layout::RIG))
            .map_err(|e| CliError::Config(format!("calibration: {e}")))?;
        let body_path = root.join(layout::BODY);
        let body = if body_path.is_file() {
            load_body(&body_path).map_err(|e| CliError::Config(format!("body: {e}")))?
        } else {
            BodyModel::default()
        };
        let frames = count_contiguous(|t| layout::frame(root, 0, t));
        let backgrounds = count_contiguous(|j| layout::background(root, 0, j));
        let truth_path = root.join(layout::POSES);
        let truth = match std::fs::read_to_string(&truth_path) {
            Ok(text) => parse_pose_csv(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", truth_path.display())))?
                .into_iter()
                .map(|(_, p)| p)
                .collect(),
            Err(_) => Vec::new(),
        };
        Ok(Self {
            root: root.to_path_buf(),
            rig,
            body,
            frames,
            backgrounds,
            truth,
        })
    }

    /// Color frame `t` of every camera.
    pub fn frame(&self, t: usize) -> Result<Vec<RgbImage>, CliError> {
        (0..self.rig.len())
            .map(|k| Ok(read_ppm(&layout::frame(&self.root, k, t))?))
            .collect()
    }

    /// Background frames of camera `k`.
    pub fn backgrounds(&self, k: usize) -> Result<Vec<RgbImage>, CliError> {
        (0..self.backgrounds)
            .map(|j| Ok(read_ppm(&layout::background(&self.root, k, j))?))
            .collect()
    }
}
