//! Annealed particle filter and the edge/silhouette weight function.
//!
//! The filter is generic over the particle state ([`State`]) and the
//! objective ([`Objective`]), so the same code tracks the 31-DOF body
//! against a [`Measurement`] and optimizes small test objectives.
//!
//! Objectives return `ln ω`; a layer with exponent `β` weights particles by
//! `ω^β`, normalized in log space so that tiny weights never underflow to a
//! zero total.

use nalgebra::Point2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bodymodel::{
    forward_kinematics, project_cylinders, BodyModel, JointLimits, PoseVector,
    DEFAULT_CONTOUR_SAMPLES, DEFAULT_INTERIOR_SAMPLES,
};
use crate::geometry::CameraRig;
use crate::image::{nearest_pixel, Plane};
use crate::parallel::{par_map, ParallelConfig};
use crate::rng::{stream, Purpose};
use crate::silhouette::{compute_edge_map, EdgeMap};
use crate::voxelgrid::VoxelCloud;

pub const DEFAULT_PARTICLES: usize = 200;
pub const DEFAULT_LAYERS: usize = 10;
pub const DEFAULT_BETA_BASE: f64 = 0.7;
pub const DEFAULT_DIFFUSION_DECAY: f64 = 0.7;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("all particle weights are zero")]
    ZeroTotalWeight,
    #[error("tracking lost at frame {frame}, layer {layer}")]
    TrackingLost { frame: usize, layer: usize },
    #[error("invalid anneal schedule: {0}")]
    InvalidSchedule(String),
    #[error("measurement has {found} cameras, rig has {expected}")]
    CameraMismatch { expected: usize, found: usize },
}

/// A point in the filter's search space.
pub trait State: Clone + Send + Sync {
    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];
}

impl State for PoseVector {
    fn values(&self) -> &[f64] {
        &self.0
    }
    fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl State for Vec<f64> {
    fn values(&self) -> &[f64] {
        self
    }
    fn values_mut(&mut self) -> &mut [f64] {
        self
    }
}

impl<const N: usize> State for [f64; N] {
    fn values(&self) -> &[f64] {
        self
    }
    fn values_mut(&mut self) -> &mut [f64] {
        self
    }
}

/// Log of an unnormalized weight `ω ∈ (0, 1]`.
pub trait Objective<S>: Sync {
    fn log_weight(&self, state: &S) -> f64;
}

impl<S, F: Fn(&S) -> f64 + Sync> Objective<S> for F {
    fn log_weight(&self, state: &S) -> f64 {
        self(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle<S = PoseVector> {
    pub pose: S,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<S = PoseVector> {
    pub particles: Vec<Particle<S>>,
    pub layer: usize,
}

impl<S: State> ParticleSet<S> {
    /// `n` copies of `pose` with uniform weights.
    pub fn uniform(pose: S, n: usize) -> Self {
        let w = 1.0 / n as f64;
        Self {
            particles: vec![Particle { pose, weight: w }; n],
            layer: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// `1 / Σ π²` of the normalized weights.
    pub fn effective_sample_size(&self) -> f64 {
        let total = self.total_weight();
        if total <= 0.0 {
            return 0.0;
        }
        1.0 / self.particles.iter().map(|p| (p.weight / total).powi(2)).sum::<f64>()
    }

    pub fn max_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealSchedule {
    /// `M`; layers run from `M` down to 0.
    pub layers: usize,
    /// `b` in `β_m = b^m`.
    pub beta_base: f64,
    /// `d` in `σ_m = σ_base · d^(M−m)`.
    pub diffusion_decay: f64,
    /// Per-DOF `σ_base`.
    pub sigma_base: Vec<f64>,
    /// Scales `σ_0` for the diffusion that seeds the next frame.
    pub temporal_multiplier: f64,
    pub seed: u64,
    /// Optional clamping applied after every diffusion.
    pub limits: Option<JointLimits>,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS,
            beta_base: DEFAULT_BETA_BASE,
            diffusion_decay: DEFAULT_DIFFUSION_DECAY,
            sigma_base: default_pose_sigma(),
            temporal_multiplier: 1.0,
            seed: 0,
            limits: None,
        }
    }
}

/// Per-DOF base diffusion for the body: 30 mm on the root translation,
/// 0.05 rad on the root orientation and 0.15 rad on every joint angle.
pub fn default_pose_sigma() -> Vec<f64> {
    let mut s = vec![0.15; crate::bodymodel::POSE_DOF];
    s[0..3].fill(30.0);
    s[3..6].fill(0.05);
    s
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |m: &str| Err(TrackError::InvalidSchedule(m.into()));
        if self.layers < 1 {
            return bad("layers must be at least 1");
        }
        if !(self.beta_base > 0.0 && self.beta_base <= 1.0) {
            return bad("beta_base must lie in (0, 1]");
        }
        if !(self.diffusion_decay > 0.0 && self.diffusion_decay.is_finite()) {
            return bad("diffusion_decay must be positive");
        }
        if self.sigma_base.is_empty() || self.sigma_base.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("sigma_base must be non-empty, finite and non-negative");
        }
        if !(self.temporal_multiplier >= 0.0 && self.temporal_multiplier.is_finite()) {
            return bad("temporal_multiplier must be non-negative");
        }
        if let Some(l) = &self.limits {
            if l.lower.len() != self.sigma_base.len() || l.upper.len() != self.sigma_base.len() {
                return bad("limits must have one bound per DOF");
            }
            if l.lower.iter().zip(&l.upper).any(|(a, b)| a > b) {
                return bad("limit lower bound above upper bound");
            }
        }
        Ok(())
    }

    pub fn beta(&self, layer: usize) -> f64 {
        self.beta_base.powi(layer as i32)
    }

    pub fn sigma(&self, layer: usize) -> Vec<f64> {
        let f = self.diffusion_decay.powi((self.layers - layer) as i32);
        self.sigma_base.iter().map(|s| s * f).collect()
    }

    fn clamp<S: State>(&self, state: &mut S) {
        if let Some(l) = &self.limits {
            for (i, v) in state.values_mut().iter_mut().enumerate() {
                *v = v.clamp(l.lower[i], l.upper[i]);
            }
        }
    }
}

/// Per-layer filter diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub beta: f64,
    pub ess: f64,
    pub max_weight: f64,
}

/// Sets `π_i ∝ exp(β ln ω_i)` and normalizes to unit sum.
pub fn weight_particles<S: State, O: Objective<S>>(
    set: &mut ParticleSet<S>,
    objective: &O,
    beta: f64,
    cfg: &ParallelConfig,
) -> Result<LayerStats, TrackError> {
    let logs = par_map(set.len(), |i| objective.log_weight(&set.particles[i].pose), cfg);
    normalize_log_weights(set, &logs, beta)?;
    Ok(LayerStats {
        layer: set.layer,
        beta,
        ess: set.effective_sample_size(),
        max_weight: set.max_weight(),
    })
}

fn normalize_log_weights<S: State>(
    set: &mut ParticleSet<S>,
    logs: &[f64],
    beta: f64,
) -> Result<(), TrackError> {
    let scaled: Vec<f64> = logs
        .iter()
        .map(|&l| if beta == 0.0 && !l.is_nan() { 0.0 } else { beta * l })
        .collect();
    let max = scaled.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(TrackError::ZeroTotalWeight);
    }
    let raw: Vec<f64> = scaled
        .iter()
        .map(|&v| if v.is_nan() { 0.0 } else { (v - max).exp() })
        .collect();
    let total: f64 = raw.iter().sum();
    for (p, w) in set.particles.iter_mut().zip(raw) {
        p.weight = w / total;
    }
    Ok(())
}

/// Systematic resampling: one uniform offset `u0`, draws at
/// `(j + u0) / N` of the cumulative weight. Output weights are `1/N`.
pub fn resample<S: State>(set: &ParticleSet<S>, rng: &mut impl Rng) -> Result<ParticleSet<S>, TrackError> {
    let n = set.len();
    let total = set.total_weight();
    if n == 0 || !(total > 0.0) || !total.is_finite() {
        return Err(TrackError::ZeroTotalWeight);
    }
    let u0: f64 = rng.random();
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cumulative = set.particles[0].weight / total;
    for j in 0..n {
        let target = (j as f64 + u0) / n as f64;
        while cumulative <= target && i + 1 < n {
            i += 1;
            cumulative += set.particles[i].weight / total;
        }
        out.push(Particle {
            pose: set.particles[i].pose.clone(),
            weight: 1.0 / n as f64,
        });
    }
    Ok(ParticleSet { particles: out, layer: set.layer })
}

/// Adds `N(0, σ_d²)` to every DOF `d` of every particle, drawing particle by
/// particle from one generator.
pub fn diffuse<S: State>(set: &ParticleSet<S>, sigma: &[f64], rng: &mut impl Rng) -> ParticleSet<S> {
    let mut out = set.clone();
    for p in &mut out.particles {
        perturb(p.pose.values_mut(), sigma, rng);
    }
    out
}

fn perturb(values: &mut [f64], sigma: &[f64], rng: &mut impl Rng) {
    for (v, s) in values.iter_mut().zip(sigma) {
        let z: f64 = rng.sample(StandardNormal);
        *v += s * z;
    }
}

/// [`diffuse`] with an independent keyed stream per particle, so the result
/// does not depend on how particles are spread across workers.
pub fn diffuse_keyed<S: State>(
    set: &ParticleSet<S>,
    sigma: &[f64],
    seed: u64,
    purpose: Purpose,
    key: &[u64],
    limits: &AnnealSchedule,
    cfg: &ParallelConfig,
) -> ParticleSet<S> {
    let particles = par_map(
        set.len(),
        |i| {
            let mut words = key.to_vec();
            words.push(i as u64);
            let mut rng = stream(seed, purpose, &words);
            let mut p = set.particles[i].clone();
            perturb(p.pose.values_mut(), sigma, &mut rng);
            limits.clamp(&mut p.pose);
            p
        },
        cfg,
    );
    ParticleSet { particles, layer: set.layer }
}

/// Weighted mean `Σ s_i π_i / Σ π_i` per DOF.
pub fn estimate<S: State>(set: &ParticleSet<S>) -> Result<S, TrackError> {
    let total = set.total_weight();
    if set.is_empty() || !(total > 0.0) || !total.is_finite() {
        return Err(TrackError::ZeroTotalWeight);
    }
    let mut out = set.particles[0].pose.clone();
    for (d, slot) in out.values_mut().iter_mut().enumerate() {
        *slot = set
            .particles
            .iter()
            .map(|p| p.pose.values()[d] * p.weight)
            .sum::<f64>()
            / total;
    }
    Ok(out)
}

/// A frame's starting set: `n` copies of `pose` diffused with `sigma`.
pub fn initial_set<S: State>(
    pose: S,
    n: usize,
    sigma: &[f64],
    sched: &AnnealSchedule,
    frame: usize,
    cfg: &ParallelConfig,
) -> ParticleSet<S> {
    let set = ParticleSet::uniform(pose, n);
    let mut set = diffuse_keyed(&set, sigma, sched.seed, Purpose::Init, &[frame as u64], sched, cfg);
    set.layer = sched.layers;
    set
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult<S = PoseVector> {
    pub estimate: S,
    /// Starting set for the next frame.
    pub next: ParticleSet<S>,
    /// Weighting statistics from layer `M` down to 0.
    pub layers: Vec<LayerStats>,
}

/// One annealing run.
///
/// For `m = M ..= 0`: weight at `β_m` and normalize; for `m > 0` resample
/// and diffuse with `σ_{m−1}`. The estimate is the weighted mean at layer 0.
/// The next frame's set is the layer-0 set resampled and diffused with
/// `σ_0 · temporal_multiplier`. Every random draw is keyed by
/// `(seed, frame, layer, particle)`.
pub fn apf_frame<S: State, O: Objective<S>>(
    prev: &ParticleSet<S>,
    objective: &O,
    sched: &AnnealSchedule,
    frame: usize,
    cfg: &ParallelConfig,
) -> Result<FrameResult<S>, TrackError> {
    sched.validate()?;
    let lost = |layer| move |_| TrackError::TrackingLost { frame, layer };
    let f = frame as u64;
    let mut set = prev.clone();
    let mut stats = Vec::with_capacity(sched.layers + 1);
    for m in (0..=sched.layers).rev() {
        set.layer = m;
        stats.push(weight_particles(&mut set, objective, sched.beta(m), cfg).map_err(lost(m))?);
        if m > 0 {
            let mut rng = stream(sched.seed, Purpose::Resample, &[f, m as u64]);
            set = resample(&set, &mut rng).map_err(lost(m))?;
            set = diffuse_keyed(&set, &sched.sigma(m - 1), sched.seed, Purpose::Diffuse, &[f, m as u64], sched, cfg);
        }
    }
    let est = estimate(&set).map_err(lost(0))?;
    if est.values().iter().any(|v| !v.is_finite()) {
        return Err(TrackError::TrackingLost { frame, layer: 0 });
    }
    let mut rng = stream(sched.seed, Purpose::Resample, &[f, u64::MAX]);
    let temporal = resample(&set, &mut rng).map_err(lost(0))?;
    let sigma: Vec<f64> = sched.sigma(0).iter().map(|s| s * sched.temporal_multiplier).collect();
    let mut next = diffuse_keyed(&temporal, &sigma, sched.seed, Purpose::Temporal, &[f], sched, cfg);
    next.layer = sched.layers;
    Ok(FrameResult { estimate: est, next, layers: stats })
}

/// Silhouette rendered from the voxel cloud, and its edge map.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraMeasurement {
    pub silhouette: Plane<f64>,
    pub edges: EdgeMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub cameras: Vec<CameraMeasurement>,
}

fn morph(src: &Plane<u8>, dilate: bool) -> Plane<u8> {
    let (w, h) = src.dims();
    Plane::from_fn(w, h, |x, y| {
        let mut hit = !dilate;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                let inside = nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h;
                // Dilation pads with 0, erosion with 1.
                let v = if inside { *src.get(nx as usize, ny as usize) != 0 } else { !dilate };
                if dilate && v {
                    hit = true;
                }
                if !dilate && !v {
                    hit = false;
                }
            }
        }
        hit as u8
    })
}

/// One 3×3 closing (dilation then erosion).
pub fn close3x3(src: &Plane<u8>) -> Plane<u8> {
    morph(&morph(src, true), false)
}

/// Marks the nearest pixel of every in-front, in-bounds voxel projection.
pub fn splat_voxels(cloud: &VoxelCloud, camera: &crate::geometry::CameraModel) -> Plane<u8> {
    let (w, h) = (camera.width(), camera.height());
    let mut img = Plane::filled(w, h, 0u8);
    for v in &cloud.voxels {
        if let Some(p) = camera.project_visible(&v.center) {
            if let Some((x, y)) = nearest_pixel(w, h, p.x, p.y) {
                img.set(x, y, 1);
            }
        }
    }
    img
}

/// Per-camera binary silhouettes of the cloud, gap-filled by a closing.
pub fn reproject_voxels(cloud: &VoxelCloud, rig: &CameraRig, cfg: &ParallelConfig) -> Vec<Plane<u8>> {
    let per_camera = (*cfg).with_chunk(1);
    par_map(rig.len(), |k| close3x3(&splat_voxels(cloud, &rig.cameras()[k])), &per_camera)
}

pub fn build_measurement(silhouettes: &[Plane<u8>], cfg: &ParallelConfig) -> Measurement {
    let per_camera = (*cfg).with_chunk(1);
    let cameras = par_map(
        silhouettes.len(),
        |k| CameraMeasurement {
            silhouette: silhouettes[k].map(|&v| if v != 0 { 1.0 } else { 0.0 }),
            edges: compute_edge_map(&silhouettes[k], k),
        },
        &per_camera,
    );
    Measurement { cameras }
}

/// Sample counts per cylinder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleCounts {
    pub contour: usize,
    pub interior: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self {
            contour: DEFAULT_CONTOUR_SAMPLES,
            interior: DEFAULT_INTERIOR_SAMPLES,
        }
    }
}

fn mismatch(samples: &[Point2<f64>], map: &Plane<f64>) -> f64 {
    samples.iter().map(|p| 1.0 - map.sample_or_zero(p.x, p.y)).sum()
}

/// `ln ω = −Σ_cameras (Σᵉ + Σʳ)`, where `Σᵉ` and `Σʳ` are the mean mismatch
/// of the contour samples against the edge map and of the interior samples
/// against the silhouette. Missing samples (cylinder behind the camera) read 0.
pub fn ssd_log_weight(
    pose: &PoseVector,
    meas: &Measurement,
    model: &BodyModel,
    rig: &CameraRig,
    counts: SampleCounts,
) -> f64 {
    let placed = forward_kinematics(pose, model);
    let mut total = 0.0;
    for (camera, cm) in rig.iter().zip(&meas.cameras) {
        let projected = project_cylinders(&placed, camera, counts.contour, counts.interior);
        let (mut edge_sum, mut sil_sum) = (0.0, 0.0);
        for pc in &projected {
            if pc.visible {
                edge_sum += mismatch(&pc.contour_samples, &cm.edges.values);
                sil_sum += mismatch(&pc.interior_samples, &cm.silhouette);
            } else {
                edge_sum += counts.contour as f64;
                sil_sum += counts.interior as f64;
            }
        }
        let n_e = (projected.len() * counts.contour).max(1) as f64;
        let n_r = (projected.len() * counts.interior).max(1) as f64;
        total += edge_sum / n_e + sil_sum / n_r;
    }
    -total
}

/// `ω^β` with `ω = exp(ssd_log_weight)`.
pub fn ssd_weight(
    pose: &PoseVector,
    meas: &Measurement,
    model: &BodyModel,
    rig: &CameraRig,
    beta: f64,
    counts: SampleCounts,
) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    (beta * ssd_log_weight(pose, meas, model, rig, counts)).exp()
}

/// The body objective for [`apf_frame`].
pub struct SsdObjective<'a> {
    pub meas: &'a Measurement,
    pub model: &'a BodyModel,
    pub rig: &'a CameraRig,
    pub counts: SampleCounts,
}

impl<'a> SsdObjective<'a> {
    pub fn new(meas: &'a Measurement, model: &'a BodyModel, rig: &'a CameraRig) -> Result<Self, TrackError> {
        if meas.cameras.len() != rig.len() {
            return Err(TrackError::CameraMismatch {
                expected: rig.len(),
                found: meas.cameras.len(),
            });
        }
        Ok(Self { meas, model, rig, counts: SampleCounts::default() })
    }
}

impl Objective<PoseVector> for SsdObjective<'_> {
    fn log_weight(&self, state: &PoseVector) -> f64 {
        ssd_log_weight(state, self.meas, self.model, self.rig, self.counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set_1d(values: &[f64], weights: &[f64]) -> ParticleSet<[f64; 1]> {
        ParticleSet {
            particles: values
                .iter()
                .zip(weights)
                .map(|(&v, &w)| Particle { pose: [v], weight: w })
                .collect(),
            layer: 0,
        }
    }

    #[test]
    fn resample_degenerate_weights() {
        let set = set_1d(&[1.0, 2.0, 3.0], &[1.0, 0.0, 0.0]);
        let out = resample(&set, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(out.particles.iter().all(|p| p.pose == [1.0] && p.weight == 1.0 / 3.0));

        let one = set_1d(&[4.0], &[1.0]);
        assert_eq!(resample(&one, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().particles[0].pose, [4.0]);

        let zero = set_1d(&[1.0, 2.0], &[0.0, 0.0]);
        assert_eq!(resample(&zero, &mut ChaCha8Rng::seed_from_u64(2)), Err(TrackError::ZeroTotalWeight));
    }

    #[test]
    fn resample_matches_stratified_oracle() {
        let weights = [0.5, 0.3, 0.2];
        let n = 10;
        let mut values = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..3 {
            values[i] = i as f64;
            w[i] = weights[i];
        }
        let set = set_1d(&values, &w);
        let out = resample(&set, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();

        let u0: f64 = ChaCha8Rng::seed_from_u64(99).random();
        let mut expected = Vec::new();
        for j in 0..n {
            let pos = (j as f64 + u0) / n as f64;
            let (mut acc, mut k) = (0.0, 0);
            loop {
                acc += w[k];
                if pos < acc || k == n - 1 {
                    break;
                }
                k += 1;
            }
            expected.push(values[k]);
        }
        let got: Vec<f64> = out.particles.iter().map(|p| p.pose[0]).collect();
        assert_eq!(got, expected);
        assert_eq!(got.iter().filter(|&&v| v == 0.0).count(), 5);
    }

    #[test]
    fn diffuse_limits_and_determinism() {
        let set = set_1d(&[1.0, -2.0], &[0.5, 0.5]);
        let out = diffuse(&set, &[1e-12], &mut ChaCha8Rng::seed_from_u64(3));
        for (a, b) in set.particles.iter().zip(&out.particles) {
            assert!((a.pose[0] - b.pose[0]).abs() < 1e-9);
        }
        let a = diffuse(&set, &[0.3], &mut ChaCha8Rng::seed_from_u64(3));
        let b = diffuse(&set, &[0.3], &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn diffusion_noise_mean_is_within_clt_bound() {
        let n = 100_000;
        let sigma = [0.5, 2.0];
        let set = ParticleSet::uniform([0.0, 0.0], n);
        let out = diffuse(&set, &sigma, &mut ChaCha8Rng::seed_from_u64(17));
        for (d, s) in sigma.iter().enumerate() {
            let mean = out.particles.iter().map(|p| p.pose[d]).sum::<f64>() / n as f64;
            assert!(mean.abs() <= 4.0 * s / (n as f64).sqrt(), "dof {d}: {mean}");
        }
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(estimate(&set_1d(&[0.0, 2.0], &[0.5, 0.5])).unwrap(), [1.0]);
        assert_eq!(estimate(&set_1d(&[0.7, 2.0], &[1.0, 0.0])).unwrap(), [0.7]);
        assert_eq!(estimate(&set_1d(&[0.7], &[0.0])), Err(TrackError::ZeroTotalWeight));
    }

    proptest! {
        #[test]
        fn estimate_matches_dot_product(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, 0.0f64..1.0), 1..50)
        ) {
            let total: f64 = pts.iter().map(|p| p.2).sum();
            prop_assume!(total > 1e-6);
            let set = ParticleSet {
                particles: pts.iter().map(|&(a, b, w)| Particle { pose: [a, b], weight: w / total }).collect(),
                layer: 0,
            };
            let est = estimate(&set).unwrap();
            for (d, e) in est.iter().enumerate() {
                let dot: f64 = set.particles.iter().map(|p| p.pose[d] * p.weight).sum();
                prop_assert!((e - dot).abs() <= 1e-12 * (1.0 + dot.abs()));
            }
        }

        #[test]
        fn weights_normalize(logs in prop::collection::vec(-800.0f64..0.0, 1..64), beta in 0.0f64..1.0) {
            let mut set = ParticleSet::uniform([0.0], logs.len());
            normalize_log_weights(&mut set, &logs, beta).unwrap();
            prop_assert!((set.total_weight() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn sharpening_preserves_order(a in -50.0f64..0.0, b in -50.0f64..0.0, beta in 0.01f64..1.0) {
            prop_assume!(a > b);
            prop_assert!((beta * a).exp() > (beta * b).exp());
        }
    }

    #[test]
    fn schedule_shape() {
        let s = AnnealSchedule {
            sigma_base: vec![2.0],
            ..AnnealSchedule::default()
        };
        assert_eq!(s.beta(0), 1.0);
        assert_relative_eq!(s.beta(3), 0.343, epsilon = 1e-15);
        assert_eq!(s.sigma(10), vec![2.0]);
        assert_relative_eq!(s.sigma(0)[0], 2.0 * 0.7f64.powi(10), epsilon = 1e-15);
        assert!(AnnealSchedule { layers: 0, ..s.clone() }.validate().is_err());
        assert!(AnnealSchedule { sigma_base: vec![-1.0], ..s }.validate().is_err());
    }

    #[test]
    fn single_particle_zero_sigma_returns_input() {
        let sched = AnnealSchedule {
            sigma_base: vec![0.0, 0.0],
            ..AnnealSchedule::default()
        };
        let set = ParticleSet::uniform([0.25, -3.0], 1);
        let obj = |s: &[f64; 2]| -(s[0] * s[0] + s[1] * s[1]);
        let r = apf_frame(&set, &obj, &sched, 0, &ParallelConfig::serial()).unwrap();
        assert_eq!(r.estimate, [0.25, -3.0]);
        assert_eq!(r.layers.len(), 11);
    }

    #[test]
    fn one_layer_equals_plain_sir() {
        let sched = AnnealSchedule {
            layers: 1,
            sigma_base: vec![0.4, 0.4],
            seed: 5,
            ..AnnealSchedule::default()
        };
        let target = [0.3, -0.2];
        let obj = move |s: &[f64; 2]| -((s[0] - target[0]).powi(2) + (s[1] - target[1]).powi(2));
        let cfg = ParallelConfig::serial();
        let start = initial_set([0.0, 0.0], 50, &[0.5, 0.5], &sched, 0, &cfg);
        let r = apf_frame(&start, &obj, &sched, 3, &cfg).unwrap();

        // Hand-rolled SIR: weight at β = 0.7, resample, diffuse with σ_0,
        // weight at β = 1, weighted mean.
        let weights = |ps: &[[f64; 2]], beta: f64| {
            let l: Vec<f64> = ps.iter().map(|p| beta * obj(p)).collect();
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
            let t: f64 = e.iter().sum();
            e.into_iter().map(|v| v / t).collect::<Vec<f64>>()
        };
        let xs: Vec<[f64; 2]> = start.particles.iter().map(|p| p.pose).collect();
        let w = weights(&xs, 0.7);
        let u0: f64 = stream(5, Purpose::Resample, &[3, 1]).random();
        let mut picked = Vec::new();
        let (mut k, mut acc) = (0, w[0]);
        for j in 0..50 {
            let pos = (j as f64 + u0) / 50.0;
            while acc <= pos && k + 1 < 50 {
                k += 1;
                acc += w[k];
            }
            picked.push(xs[k]);
        }
        let sigma0 = 0.4 * 0.7;
        let moved: Vec<[f64; 2]> = picked
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut rng = stream(5, Purpose::Diffuse, &[3, 1, i as u64]);
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [p[0] + sigma0 * a, p[1] + sigma0 * b]
            })
            .collect();
        let w = weights(&moved, 1.0);
        let mean = [0, 1].map(|d| moved.iter().zip(&w).map(|(p, w)| p[d] * w).sum::<f64>());
        assert_relative_eq!(r.estimate[0], mean[0], epsilon = 1e-12);
        assert_relative_eq!(r.estimate[1], mean[1], epsilon = 1e-12);
    }

    #[test]
    fn apf_is_worker_count_independent() {
        let sched = AnnealSchedule {
            sigma_base: vec![1.0, 1.0],
            seed: 8,
            ..AnnealSchedule::default()
        };
        let obj = |s: &[f64; 2]| -((s[0] - 1.0).powi(2) + (s[1] + 0.5).powi(2));
        let run = |w| {
            let cfg = ParallelConfig::with_workers(w).with_chunk(16);
            let start = initial_set([0.0, 0.0], 200, &[1.0, 1.0], &sched, 0, &cfg);
            apf_frame(&start, &obj, &sched, 0, &cfg).unwrap()
        };
        let base = run(1);
        for w in [2, 4, 8] {
            assert_eq!(run(w), base);
        }
    }

    #[test]
    fn closing_fills_single_pixel_gaps() {
        let mut img = Plane::filled(7, 7, 0u8);
        for x in 1..6 {
            if x != 3 {
                img.set(x, 3, 1);
            }
        }
        let closed = close3x3(&img);
        assert_eq!(*closed.get(3, 3), 1);
        // a lone pixel survives closing
        let mut lone = Plane::filled(5, 5, 0u8);
        lone.set(2, 2, 1);
        assert_eq!(close3x3(&lone), lone);
        // a lone pixel at the border survives too
        let mut edge = Plane::filled(5, 5, 0u8);
        edge.set(0, 0, 1);
        assert_eq!(close3x3(&edge), edge);
    }
}
