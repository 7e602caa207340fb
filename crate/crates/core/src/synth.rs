//! Synthetic datasets with exact ground truth.
//!
//! Cameras sit on a ring and look at a common target. Silhouettes are
//! rendered by casting the ray through every pixel center against the
//! scene's solids (spheres and conical frustums), so they serve as an exact
//! oracle for the reconstruction.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix3x4, Point3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bodymodel::{
    forward_kinematics, load_body, pose_csv_row, BodyError, BodyModel, PlacedCylinder, PoseVector,
    POSE_DOF,
};
use crate::geometry::{CameraModel, CameraRig, GeometryError};
use crate::image::{mask_to_gray, write_pgm, write_ppm, ImageError, Plane, RgbImage};
use crate::parallel::{par_map, ParallelConfig};
use crate::rng::{stream, Purpose};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene script: {0}")]
    Script(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Body(#[from] BodyError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Cameras equally spaced on a horizontal circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub n_cameras: usize,
    /// Circle radius (mm).
    pub radius: f64,
    /// Height of the camera centers (mm).
    pub height: f64,
    #[serde(default)]
    pub look_at: [f64; 3],
    /// Focal length (px).
    pub focal: f64,
    pub image_width: usize,
    pub image_height: usize,
}

impl RingSpec {
    /// World position of camera `k`, at azimuth `2πk/n` around the target.
    pub fn camera_center(&self, k: usize) -> Point3<f64> {
        let a = 2.0 * std::f64::consts::PI * k as f64 / self.n_cameras as f64;
        Point3::new(
            self.look_at[0] + self.radius * a.cos(),
            self.look_at[1] + self.radius * a.sin(),
            self.height,
        )
    }
}

/// Projection matrix of a camera at `center` looking at `target` with world
/// +z up: rows of `R` are image-right, image-down and forward.
pub fn look_at_projection(
    center: Point3<f64>,
    target: Point3<f64>,
    focal: f64,
    width: usize,
    height: usize,
) -> Option<Matrix3x4<f64>> {
    let fwd = (target - center).try_normalize(1e-12)?;
    let right = fwd.cross(&Vector3::z()).try_normalize(1e-9)?;
    let down = fwd.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    let t = -(r * center.coords);
    let k = Matrix3::new(
        focal,
        0.0,
        (width as f64 - 1.0) / 2.0,
        0.0,
        focal,
        (height as f64 - 1.0) / 2.0,
        0.0,
        0.0,
        1.0,
    );
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &t);
    Some(k * rt)
}

pub fn build_ring_rig(spec: &RingSpec) -> Result<CameraRig, SynthError> {
    if spec.n_cameras < 2 {
        return Err(SynthError::Script("a ring needs at least 2 cameras".into()));
    }
    if !(spec.radius > 0.0 && spec.focal > 0.0) {
        return Err(SynthError::Script("ring radius and focal length must be positive".into()));
    }
    let target = Point3::from(spec.look_at);
    let cameras = (0..spec.n_cameras)
        .map(|k| {
            let m = look_at_projection(spec.camera_center(k), target, spec.focal, spec.image_width, spec.image_height)
                .ok_or_else(|| SynthError::Script(format!("camera {k} looks straight up or down")))?;
            Ok(CameraModel::new(k, spec.image_width, spec.image_height, m)?)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(CameraRig::new(cameras)?)
}

/// A solid the renderer can intersect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Solid {
    Sphere { center: Point3<f64>, radius: f64 },
    /// Conical frustum between two end disks.
    Frustum {
        base: Point3<f64>,
        top: Point3<f64>,
        base_radius: f64,
        top_radius: f64,
    },
}

impl From<&PlacedCylinder> for Solid {
    fn from(c: &PlacedCylinder) -> Self {
        Solid::Frustum {
            base: c.base_center,
            top: c.top_center,
            base_radius: c.base_radius,
            top_radius: c.top_radius,
        }
    }
}

/// Minimum of `a t² + b t + c` over `[lo, hi]` (`hi` may be infinite).
fn quadratic_min(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> f64 {
    let f = |t: f64| (a * t + b) * t + c;
    let mut best = f(lo);
    if hi.is_finite() {
        best = best.min(f(hi));
    } else if a < 0.0 || (a == 0.0 && b < 0.0) {
        return f64::NEG_INFINITY;
    }
    if a > 0.0 {
        let t = (-b / (2.0 * a)).clamp(lo, hi);
        best = best.min(f(t));
    }
    best
}

impl Solid {
    /// Whether the ray `origin + t·dir`, `t ≥ 0`, meets the solid.
    pub fn hit(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> bool {
        match *self {
            Solid::Sphere { center, radius } => {
                let w = origin - center;
                quadratic_min(dir.norm_squared(), 2.0 * w.dot(dir), w.norm_squared() - radius * radius, 0.0, f64::INFINITY)
                    <= 0.0
            }
            Solid::Frustum { base, top, base_radius, top_radius } => {
                let axis = top - base;
                let len = axis.norm();
                if len == 0.0 {
                    return false;
                }
                let a = axis / len;
                let k = (top_radius - base_radius) / len;
                let w0 = origin - base;
                let (h0, hd) = (w0.dot(&a), dir.dot(&a));
                // Parameter interval where the ray is between the end planes.
                let (lo, hi) = if hd.abs() < 1e-15 {
                    if !(0.0..=len).contains(&h0) {
                        return false;
                    }
                    (0.0, f64::INFINITY)
                } else {
                    let (t0, t1) = ((0.0 - h0) / hd, (len - h0) / hd);
                    (t0.min(t1).max(0.0), t0.max(t1))
                };
                if lo > hi {
                    return false;
                }
                // radial² − r(h)² as a quadratic in t.
                let r0 = base_radius + k * h0;
                let qa = dir.norm_squared() - hd * hd - k * k * hd * hd;
                let qb = 2.0 * (w0.dot(dir) - h0 * hd - r0 * k * hd);
                let qc = w0.norm_squared() - h0 * h0 - r0 * r0;
                quadratic_min(qa, qb, qc, lo, hi) <= 0.0
            }
        }
    }
}

/// Exact binary silhouette of `solids` in `camera`.
pub fn render_silhouette(camera: &CameraModel, solids: &[Solid], cfg: &ParallelConfig) -> Plane<u8> {
    let (w, h) = (camera.width(), camera.height());
    let origin = camera.center();
    let rows = par_map(
        h,
        |y| {
            (0..w)
                .map(|x| {
                    let dir = camera.ray_direction(x as f64, y as f64);
                    solids.iter().any(|s| s.hit(&origin, &dir)) as u8
                })
                .collect::<Vec<u8>>()
        },
        &(*cfg).with_chunk(8),
    );
    Plane::from_vec(w, h, rows.concat())
}

/// Colors and noise shared by every rendered frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appearance {
    pub background: [u8; 3],
    pub foreground: [u8; 3],
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Flat colors plus Gaussian noise, one keyed stream per image row.
pub fn colorize(mask: &Plane<u8>, look: &Appearance, purpose: Purpose, key: &[u64], cfg: &ParallelConfig) -> RgbImage {
    let (w, h) = mask.dims();
    let rows = par_map(
        h,
        |y| {
            let mut words = key.to_vec();
            words.push(y as u64);
            let mut rng = stream(look.seed, purpose, &words);
            let mut row = Vec::with_capacity(3 * w);
            for x in 0..w {
                let base = if *mask.get(x, y) != 0 { look.foreground } else { look.background };
                for c in base {
                    let z: f64 = if look.noise_sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
                    row.push((c as f64 + look.noise_sigma * z).round().clamp(0.0, 255.0) as u8);
                }
            }
            row
        },
        &(*cfg).with_chunk(8),
    );
    RgbImage::from_raw(w as u32, h as u32, rows.concat()).expect("row lengths match the image size")
}

/// Per-camera noisy color frame and exact silhouette.
pub fn render_frame(
    rig: &CameraRig,
    solids: &[Solid],
    look: &Appearance,
    frame: usize,
    cfg: &ParallelConfig,
) -> Vec<(RgbImage, Plane<u8>)> {
    rig.iter()
        .map(|cam| {
            let mask = render_silhouette(cam, solids, cfg);
            let img = colorize(&mask, look, Purpose::ImageNoise, &[frame as u64, cam.id() as u64], cfg);
            (img, mask)
        })
        .collect()
}

/// Empty-scene frame `index` for every camera.
pub fn render_backgrounds(rig: &CameraRig, look: &Appearance, index: usize, cfg: &ParallelConfig) -> Vec<RgbImage> {
    rig.iter()
        .map(|cam| {
            let mask = Plane::filled(cam.width(), cam.height(), 0u8);
            colorize(&mask, look, Purpose::BackgroundNoise, &[index as u64, cam.id() as u64], cfg)
        })
        .collect()
}

/// What the scene contains over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Motion {
    /// The body at explicit per-frame poses.
    Poses { poses: Vec<Vec<f64>> },
    /// The body at `base_pose`, with DOF `dof` set to
    /// `amplitude · sin(2π · frequency · t)` at frame `t`.
    ArmWave {
        amplitude: f64,
        /// Cycles per frame.
        frequency: f64,
        #[serde(default = "default_wave_dof")]
        dof: usize,
        #[serde(default)]
        base_pose: Option<Vec<f64>>,
    },
    /// A static sphere (mm).
    Sphere { center: [f64; 3], radius: f64 },
}

/// Left shoulder, rotation about the arm's local y: a vertical wave.
pub fn default_wave_dof() -> usize {
    crate::bodymodel::LEFT_SHOULDER.start + 1
}

/// Standing at the origin with the feet just above the floor.
pub fn default_standing_pose() -> PoseVector {
    PoseVector::zeros().with_translation([0.0, 0.0, 900.0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub rig: RingSpec,
    /// Body configuration file, relative to the script; built-in default
    /// when absent.
    #[serde(default)]
    pub body: Option<PathBuf>,
    pub motion: Motion,
    #[serde(default = "default_background")]
    pub background_color: [u8; 3],
    #[serde(default = "default_foreground")]
    pub foreground_color: [u8; 3],
    /// Gray levels.
    #[serde(default)]
    pub noise_sigma: f64,
    pub frames: usize,
    /// Empty-scene frames per camera for background training.
    #[serde(default = "default_background_frames")]
    pub background_frames: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_background() -> [u8; 3] {
    [40, 60, 90]
}

fn default_foreground() -> [u8; 3] {
    [210, 160, 120]
}

fn default_background_frames() -> usize {
    5
}

impl SceneScript {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let s: SceneScript = serde_json::from_str(text).map_err(|e| SynthError::Script(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Script(m));
        if self.rig.n_cameras < 2 {
            return bad("rig.n_cameras must be at least 2".into());
        }
        if self.frames < 1 {
            return bad("frames must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        match &self.motion {
            Motion::Poses { poses } => {
                if poses.len() < self.frames {
                    return bad(format!("motion.poses has {} rows for {} frames", poses.len(), self.frames));
                }
                if let Some(p) = poses.iter().find(|p| p.len() != POSE_DOF) {
                    return bad(format!("every pose needs {POSE_DOF} values, found {}", p.len()));
                }
            }
            Motion::ArmWave { dof, base_pose, .. } => {
                if *dof >= POSE_DOF {
                    return bad(format!("motion.dof must be below {POSE_DOF}"));
                }
                if base_pose.as_ref().is_some_and(|p| p.len() != POSE_DOF) {
                    return bad(format!("motion.base_pose needs {POSE_DOF} values"));
                }
            }
            Motion::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad("motion.radius must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn appearance(&self) -> Appearance {
        Appearance {
            background: self.background_color,
            foreground: self.foreground_color,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    /// True body pose at `frame`, or `None` for non-body scenes.
    pub fn pose(&self, frame: usize) -> Option<PoseVector> {
        match &self.motion {
            Motion::Poses { poses } => PoseVector::from_slice(&poses[frame]),
            Motion::ArmWave { amplitude, frequency, dof, base_pose } => {
                let mut p = base_pose
                    .as_deref()
                    .and_then(PoseVector::from_slice)
                    .unwrap_or_else(default_standing_pose);
                p.0[*dof] = amplitude * (2.0 * std::f64::consts::PI * frequency * frame as f64).sin();
                Some(p)
            }
            Motion::Sphere { .. } => None,
        }
    }

    /// Solids present at `frame`.
    pub fn solids(&self, body: &BodyModel, frame: usize) -> Vec<Solid> {
        match (&self.motion, self.pose(frame)) {
            (Motion::Sphere { center, radius }, _) => vec![Solid::Sphere {
                center: Point3::from(*center),
                radius: *radius,
            }],
            (_, Some(pose)) => forward_kinematics(&pose, body).iter().map(Solid::from).collect(),
            _ => Vec::new(),
        }
    }
}

/// Dataset file names.
pub mod layout {
    use std::path::{Path, PathBuf};

    pub const RIG: &str = "rig.txt";
    pub const BODY: &str = "body.txt";
    pub const SCRIPT: &str = "script.json";
    pub const POSES: &str = "truth/poses.csv";

    pub fn frame(root: &Path, camera: usize, frame: usize) -> PathBuf {
        root.join(format!("frames/cam{camera}_f{frame}.ppm"))
    }

    pub fn silhouette(root: &Path, camera: usize, frame: usize) -> PathBuf {
        root.join(format!("truth/sil_cam{camera}_f{frame}.pgm"))
    }

    pub fn background(root: &Path, camera: usize, index: usize) -> PathBuf {
        root.join(format!("background/cam{camera}_b{index}.ppm"))
    }
}

/// Summary of a written dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub root: PathBuf,
    pub cameras: usize,
    pub frames: usize,
}

/// Writes the dataset for `script` under `out`. `script_dir` resolves a
/// relative body path. Output is a function of the script alone.
pub fn generate_sequence(
    script: &SceneScript,
    script_dir: &Path,
    out: &Path,
    cfg: &ParallelConfig,
) -> Result<DatasetSummary, SynthError> {
    script.validate()?;
    let body = match &script.body {
        Some(p) => load_body(&script_dir.join(p))?,
        None => BodyModel::default(),
    };
    let rig = build_ring_rig(&script.rig)?;
    let look = script.appearance();
    for dir in ["frames", "truth", "background"] {
        let d = out.join(dir);
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let write = |name: &str, text: String| {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(io_err(&p))
    };
    write(layout::RIG, rig.to_calibration_string())?;
    write(layout::BODY, body.to_config_string())?;
    let json = serde_json::to_string_pretty(script).map_err(|e| SynthError::Script(e.to_string()))?;
    write(layout::SCRIPT, json + "\n")?;

    for j in 0..script.background_frames {
        for (k, img) in render_backgrounds(&rig, &look, j, cfg).iter().enumerate() {
            write_ppm(&layout::background(out, k, j), img)?;
        }
    }
    let mut poses = String::new();
    for t in 0..script.frames {
        let solids = script.solids(&body, t);
        for (k, (img, mask)) in render_frame(&rig, &solids, &look, t, cfg).iter().enumerate() {
            write_ppm(&layout::frame(out, k, t), img)?;
            write_pgm(&layout::silhouette(out, k, t), &mask_to_gray(mask))?;
        }
        if let Some(p) = script.pose(t) {
            poses.push_str(&pose_csv_row(t, &p));
            poses.push('\n');
        }
    }
    write(layout::POSES, poses)?;
    log::info!("wrote {} frames x {} cameras to {}", script.frames, rig.len(), out.display());
    Ok(DatasetSummary {
        root: out.to_path_buf(),
        cameras: rig.len(),
        frames: script.frames,
    })
}
