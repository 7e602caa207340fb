//! Foreground posterior maps and silhouette edge maps.
//!
//! The background of each pixel is a single Gaussian per RGB channel; the
//! foreground is uniform over the 8-bit color cube. With equal priors the
//! foreground posterior is `u / (u + g)`, evaluated from log densities.

use crate::image::{Plane, RgbImage};
use crate::parallel::{par_map, ParallelConfig};
use thiserror::Error;

pub const DEFAULT_SIGMA_FLOOR: f64 = 1.0;

/// `ln((1/256)^3)`: log density of the uniform foreground color model.
pub const LN_UNIFORM_FOREGROUND: f64 = -3.0 * 5.545_177_444_479_562; // 3 ln 256

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, PartialEq)]
pub enum SilhouetteError {
    #[error("no frames to train the background model")]
    EmptyInput,
    #[error("image is {found:?}, expected {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// Per-pixel per-channel Gaussian background.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    pub camera_id: usize,
    pub mean: Plane<[f64; 3]>,
    pub sigma: Plane<[f64; 3]>,
}

/// Per-pixel foreground posterior in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteLikelihoodMap {
    pub camera_id: usize,
    pub values: Plane<f64>,
}

/// Proximity to a silhouette boundary in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub camera_id: usize,
    pub values: Plane<f64>,
}

fn dims(img: &RgbImage) -> (usize, usize) {
    (img.width() as usize, img.height() as usize)
}

/// Sample mean and population standard deviation per pixel and channel,
/// with the deviation clamped up to `sigma_floor`.
pub fn train_background(
    camera_id: usize,
    frames: &[RgbImage],
    sigma_floor: f64,
) -> Result<BackgroundModel, SilhouetteError> {
    let first = frames.first().ok_or(SilhouetteError::EmptyInput)?;
    let (w, h) = dims(first);
    if let Some(bad) = frames.iter().find(|f| dims(f) != (w, h)) {
        return Err(SilhouetteError::DimensionMismatch {
            expected: (w, h),
            found: dims(bad),
        });
    }
    let n = frames.len() as f64;
    let mut sum = vec![[0.0f64; 3]; w * h];
    for f in frames {
        for (acc, px) in sum.iter_mut().zip(f.as_raw().chunks_exact(3)) {
            for c in 0..3 {
                acc[c] += px[c] as f64;
            }
        }
    }
    let mean: Vec<[f64; 3]> = sum.iter().map(|s| s.map(|v| v / n)).collect();
    let mut sq = vec![[0.0f64; 3]; w * h];
    for f in frames {
        for ((acc, px), mu) in sq.iter_mut().zip(f.as_raw().chunks_exact(3)).zip(&mean) {
            for c in 0..3 {
                let d = px[c] as f64 - mu[c];
                acc[c] += d * d;
            }
        }
    }
    let sigma = sq
        .iter()
        .map(|s| s.map(|v| (v / n).sqrt().max(sigma_floor)))
        .collect();
    Ok(BackgroundModel {
        camera_id,
        mean: Plane::from_vec(w, h, mean),
        sigma: Plane::from_vec(w, h, sigma),
    })
}

/// Foreground posterior of one color against one background Gaussian.
#[inline]
pub fn foreground_posterior(color: [f64; 3], mean: [f64; 3], sigma: [f64; 3]) -> f64 {
    let ln_g: f64 = (0..3)
        .map(|c| {
            let z = (color[c] - mean[c]) / sigma[c];
            -0.5 * z * z - sigma[c].ln() - LN_SQRT_2PI
        })
        .sum();
    // u / (u + g) = 1 / (1 + g/u); exp overflow gives 0, underflow gives 1.
    1.0 / (1.0 + (ln_g - LN_UNIFORM_FOREGROUND).exp())
}

pub fn compute_slm(
    model: &BackgroundModel,
    image: &RgbImage,
    cfg: &ParallelConfig,
) -> Result<SilhouetteLikelihoodMap, SilhouetteError> {
    let (w, h) = model.mean.dims();
    if dims(image) != (w, h) {
        return Err(SilhouetteError::DimensionMismatch {
            expected: (w, h),
            found: dims(image),
        });
    }
    let raw = image.as_raw();
    let mean = model.mean.as_slice();
    let sigma = model.sigma.as_slice();
    let values = par_map(
        w * h,
        |i| {
            let color = [raw[3 * i] as f64, raw[3 * i + 1] as f64, raw[3 * i + 2] as f64];
            foreground_posterior(color, mean[i], sigma[i])
        },
        cfg,
    );
    Ok(SilhouetteLikelihoodMap {
        camera_id: model.camera_id,
        values: Plane::from_vec(w, h, values),
    })
}

/// Binary silhouette to edge proximity map.
///
/// A pixel is a boundary pixel when any of its 8 neighbors inside the image
/// has a different label (an L∞ discrete gradient, nonzero exactly on both
/// sides of every label change). The boundary indicator is blurred with a
/// normalized 5×5 box (zero padding) and the result is `max(boundary, blur)`,
/// so boundary pixels read 1 and the response fades over two pixels.
pub fn compute_edge_map(binary: &Plane<u8>, camera_id: usize) -> EdgeMap {
    let (w, h) = binary.dims();
    let label = |x: usize, y: usize| *binary.get(x, y) != 0;
    let boundary = Plane::from_fn(w, h, |x, y| {
        let me = label(x, y);
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let differs = (y0..=y1).any(|yy| (x0..=x1).any(|xx| label(xx, yy) != me));
        if differs {
            1.0
        } else {
            0.0
        }
    });
    let blurred = box_blur(&boundary, 2);
    let values = Plane::from_vec(
        w,
        h,
        boundary
            .as_slice()
            .iter()
            .zip(blurred.as_slice())
            .map(|(&b, &s)| b.max(s))
            .collect(),
    );
    EdgeMap { camera_id, values }
}

/// Normalized (2r+1)² box filter with zero padding.
fn box_blur(src: &Plane<f64>, radius: usize) -> Plane<f64> {
    let (w, h) = src.dims();
    let r = radius as isize;
    let window = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let horiz = Plane::from_fn(w, h, |x, y| {
        (-r..=r)
            .filter_map(|d| {
                let xx = x as isize + d;
                (0..w as isize).contains(&xx).then(|| *src.get(xx as usize, y))
            })
            .sum::<f64>()
    });
    Plane::from_fn(w, h, |x, y| {
        (-r..=r)
            .filter_map(|d| {
                let yy = y as isize + d;
                (0..h as isize).contains(&yy).then(|| *horiz.get(x, yy as usize))
            })
            .sum::<f64>()
            / window
    })
}
