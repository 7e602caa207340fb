//! Probabilistic shape from silhouette.
//!
//! Each voxel center is projected into every view and the silhouette
//! likelihood under it is read. A view contributes `P(S | V)` after
//! marginalizing an occlusion latent `O`:
//!
//! | O | V | P(S \| O, V) |
//! |---|---|--------------|
//! | 0 | 0 | 1 - SLM      |
//! | 1 | 0 | SLM          |
//! | 0 | 1 | SLM          |
//! | 1 | 1 | SLM          |
//!
//! The views are combined by product and the occupancy posterior follows from
//! Bayes' rule with the voxel prior. Products are accumulated as sums of logs.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, CameraRig};
use crate::image::{sample_rgb, RgbImage};
use crate::parallel::{par_map, ParallelConfig};
use crate::silhouette::SilhouetteLikelihoodMap;

/// Per-axis counts beyond which the reconstruction is larger than the
/// reference setup; exceeding them only logs a warning.
pub const SOFT_MAX_DIMS: [usize; 3] = [150, 150, 100];

/// SLM value used for views that do not see a voxel.
pub const UNINFORMATIVE_SLM: f64 = 0.5;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("expected {expected} per-camera inputs, got {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("camera {camera}: input is {found:?}, camera image is {expected:?}")]
    DimensionMismatch {
        camera: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid volume of interest: {0}")]
    InvalidVolume(String),
    #[error("invalid fusion parameters: {0}")]
    InvalidParams(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {path}: {reason}")]
    Format { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> VoxelError + '_ {
    move |source| VoxelError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeOfInterest {
    /// Minimum corner of the volume, mm.
    pub origin: [f64; 3],
    /// Edge length of a voxel, mm.
    pub spacing: f64,
    /// Voxel counts along x, y, z.
    pub dims: [usize; 3],
}

impl VolumeOfInterest {
    pub fn new(origin: [f64; 3], spacing: f64, dims: [usize; 3]) -> Result<Self, VoxelError> {
        let voi = Self {
            origin,
            spacing,
            dims,
        };
        voi.validate()?;
        Ok(voi)
    }

    /// Checks the hard invariants and warns on the soft size limits.
    pub fn validate(&self) -> Result<(), VoxelError> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(VoxelError::InvalidVolume(format!(
                "spacing must be positive, got {}",
                self.spacing
            )));
        }
        if self.dims.contains(&0) {
            return Err(VoxelError::InvalidVolume(format!(
                "every axis needs at least one voxel, got {:?}",
                self.dims
            )));
        }
        if self.dims.iter().zip(SOFT_MAX_DIMS).any(|(&d, m)| d > m) {
            log::warn!(
                "volume {:?} exceeds the reference maximum {:?}",
                self.dims,
                SOFT_MAX_DIMS
            );
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// x-fastest linear index.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    #[inline]
    pub fn center(&self, index: usize) -> Point3<f64> {
        let [i, j, k] = self.coords(index);
        Point3::new(
            self.origin[0] + self.spacing * (i as f64 + 0.5),
            self.origin[1] + self.spacing * (j as f64 + 0.5),
            self.origin[2] + self.spacing * (k as f64 + 0.5),
        )
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| {
            let lo = self.origin[a];
            let hi = lo + self.spacing * self.dims[a] as f64;
            p[a] >= lo && p[a] <= hi
        })
    }
}

/// Voxel centers in x-fastest order.
pub fn voxel_centers(voi: &VolumeOfInterest) -> Vec<Point3<f64>> {
    (0..voi.len()).map(|i| voi.center(i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub voi: VolumeOfInterest,
    pub prob: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    pub voi: VolumeOfInterest,
    pub occupied: Vec<bool>,
}

impl BinaryVolume {
    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voxel {
    pub center: Point3<f64>,
    pub color: Option<[u8; 3]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VoxelCloud {
    pub voxels: Vec<Voxel>,
}

impl VoxelCloud {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionParams {
    /// `P(O = 1)`.
    pub occlusion_prior: f64,
    /// `P(V = 1)`.
    pub voxel_prior: f64,
    /// Smoothed occupancy must exceed this to mark a voxel occupied.
    pub threshold: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            occlusion_prior: 0.5,
            voxel_prior: 0.5,
            threshold: 0.5,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<(), VoxelError> {
        for (name, v) in [
            ("occlusion_prior", self.occlusion_prior),
            ("voxel_prior", self.voxel_prior),
            ("threshold", self.threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(VoxelError::InvalidParams(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `P(S_k | V)` for one view with the occlusion latent summed out.
#[inline]
pub fn per_view_likelihood(slm_value: f64, occupied: bool, params: &FusionParams) -> f64 {
    let po = params.occlusion_prior;
    if occupied {
        slm_value * (1.0 - po) + slm_value * po
    } else {
        (1.0 - slm_value) * (1.0 - po) + slm_value * po
    }
}

/// Occupancy posterior from the SLM values sampled in each view.
pub fn fuse_samples(samples: impl IntoIterator<Item = f64>, params: &FusionParams) -> f64 {
    let mut log_occ = params.voxel_prior.ln();
    let mut log_free = (1.0 - params.voxel_prior).ln();
    for s in samples {
        if log_occ > f64::NEG_INFINITY {
            let l1 = per_view_likelihood(s, true, params);
            log_occ = if l1 > 0.0 { log_occ + l1.ln() } else { f64::NEG_INFINITY };
        }
        if log_free > f64::NEG_INFINITY {
            let l0 = per_view_likelihood(s, false, params);
            log_free = if l0 > 0.0 { log_free + l0.ln() } else { f64::NEG_INFINITY };
        }
    }
    match (log_occ == f64::NEG_INFINITY, log_free == f64::NEG_INFINITY) {
        (true, true) => params.voxel_prior,
        (true, false) => 0.0,
        (false, true) => 1.0,
        (false, false) => 1.0 / (1.0 + (log_free - log_occ).exp()),
    }
}

/// SLM under the projection of `point`, or [`UNINFORMATIVE_SLM`] when the
/// point is behind the camera or projects off the image.
#[inline]
pub fn sample_view(camera: &CameraModel, slm: &SilhouetteLikelihoodMap, point: &Point3<f64>) -> f64 {
    match camera.project_visible(point) {
        Some(px) => slm.values.sample_clamped(px.x, px.y),
        None => UNINFORMATIVE_SLM,
    }
}

fn check_per_camera<T>(
    rig: &CameraRig,
    inputs: &[T],
    dims: impl Fn(&T) -> (usize, usize),
) -> Result<(), VoxelError> {
    if inputs.len() != rig.len() {
        return Err(VoxelError::CountMismatch {
            expected: rig.len(),
            found: inputs.len(),
        });
    }
    for (cam, input) in rig.iter().zip(inputs) {
        let found = dims(input);
        let expected = (cam.width(), cam.height());
        if found != expected {
            return Err(VoxelError::DimensionMismatch {
                camera: cam.id(),
                expected,
                found,
            });
        }
    }
    Ok(())
}

/// Occupancy posterior of every voxel given one SLM per camera.
pub fn fuse_occupancy(
    voi: &VolumeOfInterest,
    rig: &CameraRig,
    slms: &[SilhouetteLikelihoodMap],
    params: &FusionParams,
    cfg: &ParallelConfig,
) -> Result<OccupancyGrid, VoxelError> {
    voi.validate()?;
    params.validate()?;
    check_per_camera(rig, slms, |s| s.values.dims())?;
    let cams = rig.cameras();
    let prob = par_map(
        voi.len(),
        |i| {
            let center = voi.center(i);
            fuse_samples(
                cams.iter()
                    .zip(slms)
                    .map(|(cam, slm)| sample_view(cam, slm, &center)),
                params,
            )
        },
        cfg,
    );
    Ok(OccupancyGrid { voi: *voi, prob })
}

/// 3×3×3 box average with zero padding, then `> threshold`.
pub fn smooth_and_threshold(
    grid: &OccupancyGrid,
    params: &FusionParams,
    cfg: &ParallelConfig,
) -> BinaryVolume {
    let voi = grid.voi;
    let [nx, ny, nz] = voi.dims;
    let occupied = par_map(
        voi.len(),
        |idx| {
            let [i, j, k] = voi.coords(idx);
            let mut sum = 0.0;
            for kk in k.saturating_sub(1)..=(k + 1).min(nz - 1) {
                for jj in j.saturating_sub(1)..=(j + 1).min(ny - 1) {
                    for ii in i.saturating_sub(1)..=(i + 1).min(nx - 1) {
                        sum += grid.prob[voi.index(ii, jj, kk)];
                    }
                }
            }
            sum / 27.0 > params.threshold
        },
        cfg,
    );
    BinaryVolume { voi, occupied }
}

/// Occupied voxels with at least one free 6-neighbor; the outside of the
/// volume counts as free.
pub fn extract_surface(vol: &BinaryVolume) -> VoxelCloud {
    let voi = vol.voi;
    let [nx, ny, nz] = voi.dims;
    let occ = |i: isize, j: isize, k: isize| {
        i >= 0
            && j >= 0
            && k >= 0
            && (i as usize) < nx
            && (j as usize) < ny
            && (k as usize) < nz
            && vol.occupied[voi.index(i as usize, j as usize, k as usize)]
    };
    const NEIGHBORS: [[isize; 3]; 6] = [
        [-1, 0, 0],
        [1, 0, 0],
        [0, -1, 0],
        [0, 1, 0],
        [0, 0, -1],
        [0, 0, 1],
    ];
    let voxels = (0..voi.len())
        .filter(|&idx| vol.occupied[idx])
        .filter(|&idx| {
            let [i, j, k] = voi.coords(idx).map(|c| c as isize);
            NEIGHBORS
                .iter()
                .any(|d| !occ(i + d[0], j + d[1], k + d[2]))
        })
        .map(|idx| Voxel {
            center: voi.center(idx),
            color: None,
        })
        .collect();
    VoxelCloud { voxels }
}

/// Average color of each voxel over the views that see it as foreground.
///
/// A view qualifies when the voxel projects in front of the camera, onto
/// the image, and the SLM there exceeds `slm_gate`. Self-occlusion is not
/// tested.
pub fn color_voxels(
    cloud: &VoxelCloud,
    rig: &CameraRig,
    images: &[RgbImage],
    slms: &[SilhouetteLikelihoodMap],
    slm_gate: f64,
    cfg: &ParallelConfig,
) -> Result<VoxelCloud, VoxelError> {
    check_per_camera(rig, images, |img| (img.width() as usize, img.height() as usize))?;
    check_per_camera(rig, slms, |s| s.values.dims())?;
    let cams = rig.cameras();
    let voxels = par_map(
        cloud.len(),
        |i| {
            let v = cloud.voxels[i];
            let mut sum = [0.0; 3];
            let mut n = 0usize;
            for ((cam, img), slm) in cams.iter().zip(images).zip(slms) {
                let Some(px) = cam.project_visible(&v.center) else {
                    continue;
                };
                if slm.values.sample_clamped(px.x, px.y) <= slm_gate {
                    continue;
                }
                let c = sample_rgb(img, px.x, px.y);
                for a in 0..3 {
                    sum[a] += c[a];
                }
                n += 1;
            }
            let color = (n > 0).then(|| sum.map(|s| (s / n as f64 + 0.5).floor().clamp(0.0, 255.0) as u8));
            Voxel {
                center: v.center,
                color,
            }
        },
        cfg,
    );
    Ok(VoxelCloud { voxels })
}

/// ASCII PLY with float xyz and uchar rgb; uncolored voxels are written as
/// black and flagged by a `comment uncolored` header line.
pub fn write_ply(path: &Path, cloud: &VoxelCloud) -> Result<(), VoxelError> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    if cloud.voxels.iter().any(|v| v.color.is_none()) {
        s.push_str("comment uncolored\n");
    }
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for v in &cloud.voxels {
        let [r, g, b] = v.color.unwrap_or([0, 0, 0]);
        let _ = writeln!(
            s,
            "{} {} {} {r} {g} {b}",
            v.center.x as f32, v.center.y as f32, v.center.z as f32
        );
    }
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    out.write_all(s.as_bytes()).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

/// Reads clouds written by [`write_ply`]. Colors are restored only when the
/// file carries no `comment uncolored` line.
pub fn read_ply(path: &Path) -> Result<VoxelCloud, VoxelError> {
    let bad = |reason: String| VoxelError::Format {
        path: path.display().to_string(),
        reason,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut lines = reader.lines();
    let mut next = || -> Result<Option<String>, VoxelError> {
        lines.next().transpose().map_err(io_err(path))
    };
    if next()?.as_deref() != Some("ply") {
        return Err(bad("missing `ply` magic".into()));
    }
    let mut count = None;
    let mut uncolored = false;
    loop {
        let line = next()?.ok_or_else(|| bad("unterminated header".into()))?;
        let line = line.trim();
        if line == "end_header" {
            break;
        } else if line == "comment uncolored" {
            uncolored = true;
        } else if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(
                n.trim()
                    .parse::<usize>()
                    .map_err(|e| bad(format!("vertex count: {e}")))?,
            );
        } else if line.starts_with("format") && line != "format ascii 1.0" {
            return Err(bad(format!("unsupported {line:?}")));
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let mut voxels = Vec::with_capacity(count);
    for n in 0..count {
        let line = next()?.ok_or_else(|| bad(format!("expected {count} vertices, got {n}")))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(format!("vertex {n}: expected 6 fields")));
        }
        let xyz: Vec<f64> = f[..3]
            .iter()
            .map(|t| t.parse::<f32>().map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("vertex {n}: {e}")))?;
        let rgb: Vec<u8> = f[3..]
            .iter()
            .map(|t| t.parse::<u8>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("vertex {n}: {e}")))?;
        voxels.push(Voxel {
            center: Point3::new(xyz[0], xyz[1], xyz[2]),
            color: (!uncolored).then(|| [rgb[0], rgb[1], rgb[2]]),
        });
    }
    Ok(VoxelCloud { voxels })
}

/// Raw occupancy dump: a text header line
/// `VOXF32 <xlen> <ylen> <zlen> <spacing> <ox> <oy> <oz>` followed by
/// little-endian `f32` probabilities in x-fastest order.
pub fn write_occupancy(path: &Path, grid: &OccupancyGrid) -> Result<(), VoxelError> {
    let v = &grid.voi;
    let mut buf = format!(
        "VOXF32 {} {} {} {} {} {} {}\n",
        v.dims[0], v.dims[1], v.dims[2], v.spacing, v.origin[0], v.origin[1], v.origin[2]
    )
    .into_bytes();
    buf.reserve(grid.prob.len() * 4);
    for &p in &grid.prob {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    out.write_all(&buf).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_occupancy(path: &Path) -> Result<OccupancyGrid, VoxelError> {
    let bad = |reason: String| VoxelError::Format {
        path: path.display().to_string(),
        reason,
    };
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8".into()))?;
    let f: Vec<&str> = header.split_whitespace().collect();
    if f.len() != 8 || f[0] != "VOXF32" {
        return Err(bad(format!("bad header {header:?}")));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s:?}: {e}")));
    let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
    let voi = VolumeOfInterest::new(
        [num(f[5])?, num(f[6])?, num(f[7])?],
        num(f[4])?,
        [dim(f[1])?, dim(f[2])?, dim(f[3])?],
    )?;
    let body = &bytes[nl + 1..];
    if body.len() != voi.len() * 4 {
        return Err(bad("payload size does not match header".into()));
    }
    let prob = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(OccupancyGrid { voi, prob })
}
