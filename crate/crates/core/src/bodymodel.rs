//! Ten-cylinder articulated body, its 31-DOF pose, and per-camera cylinder
//! projection.
//!
//! # Pose layout
//!
//! | indices | joint                                   |
//! |---------|-----------------------------------------|
//! | 0..3    | root translation (mm)                   |
//! | 3..6    | root orientation, XYZ Euler (rad)       |
//! | 6..8    | spine bend about x, y                   |
//! | 8..11   | head, XYZ Euler                         |
//! | 11..14  | left shoulder, XYZ Euler                |
//! | 14..16  | left elbow flex (x), twist (z)          |
//! | 16..19  | right shoulder                          |
//! | 19..21  | right elbow                             |
//! | 21..24  | left hip                                |
//! | 24..26  | left knee flex, twist                   |
//! | 26..29  | right hip                               |
//! | 29..31  | right knee                              |
//!
//! XYZ Euler angles `(a, b, c)` compose as `Rz(c) Ry(b) Rx(a)`; the two-DOF
//! joints compose as `Rz(twist) Rx(flex)` and the spine as `Ry(b) Rx(a)`.
//!
//! # Frames
//!
//! The root frame (the pelvis) sits at the root translation with the root
//! orientation. A part attached to `parent` has the frame
//! `parent · T(attach_offset) · R_rest · R_joint`, and its cylinder runs
//! from the frame origin along local +z for `length`. `R_rest` produces the
//! T-pose at zero angles: thighs point down, upper arms point sideways
//! (left toward +x), everything else continues its parent's +z.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Point2, Point3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::CameraModel;

pub const POSE_DOF: usize = 31;
pub const PART_COUNT: usize = 10;

pub const ROOT_TRANSLATION: Range<usize> = 0..3;
pub const ROOT_ORIENTATION: Range<usize> = 3..6;
pub const SPINE: Range<usize> = 6..8;
pub const HEAD: Range<usize> = 8..11;
pub const LEFT_SHOULDER: Range<usize> = 11..14;
pub const LEFT_ELBOW: Range<usize> = 14..16;
pub const RIGHT_SHOULDER: Range<usize> = 16..19;
pub const RIGHT_ELBOW: Range<usize> = 19..21;
pub const LEFT_HIP: Range<usize> = 21..24;
pub const LEFT_KNEE: Range<usize> = 24..26;
pub const RIGHT_HIP: Range<usize> = 26..29;
pub const RIGHT_KNEE: Range<usize> = 29..31;

/// Points sampled around each end circle before projection.
pub const CIRCLE_SAMPLES: usize = 32;
pub const DEFAULT_CONTOUR_SAMPLES: usize = 16;
pub const DEFAULT_INTERIOR_SAMPLES: usize = 25;

#[derive(Debug, Error)]
pub enum BodyError {
    #[error("malformed body tree: {0}")]
    MalformedTree(String),
    #[error("body config parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("invalid cylinder {part}: {reason}")]
    InvalidCylinder { part: PartName, reason: String },
    #[error("pose CSV error at line {line}: {reason}")]
    PoseCsv { line: usize, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The ten body parts, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartName {
    Torso,
    LeftThigh,
    LeftCalf,
    RightThigh,
    RightCalf,
    LeftUpperArm,
    LeftLowerArm,
    RightUpperArm,
    RightLowerArm,
    Head,
}

impl PartName {
    pub const ALL: [PartName; PART_COUNT] = [
        PartName::Torso,
        PartName::LeftThigh,
        PartName::LeftCalf,
        PartName::RightThigh,
        PartName::RightCalf,
        PartName::LeftUpperArm,
        PartName::LeftLowerArm,
        PartName::RightUpperArm,
        PartName::RightLowerArm,
        PartName::Head,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PartName::Torso => "torso",
            PartName::LeftThigh => "left_thigh",
            PartName::LeftCalf => "left_calf",
            PartName::RightThigh => "right_thigh",
            PartName::RightCalf => "right_calf",
            PartName::LeftUpperArm => "left_upper_arm",
            PartName::LeftLowerArm => "left_lower_arm",
            PartName::RightUpperArm => "right_upper_arm",
            PartName::RightLowerArm => "right_lower_arm",
            PartName::Head => "head",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Pose indices driving this part's joint.
    pub fn dofs(self) -> Range<usize> {
        match self {
            PartName::Torso => SPINE,
            PartName::Head => HEAD,
            PartName::LeftUpperArm => LEFT_SHOULDER,
            PartName::LeftLowerArm => LEFT_ELBOW,
            PartName::RightUpperArm => RIGHT_SHOULDER,
            PartName::RightLowerArm => RIGHT_ELBOW,
            PartName::LeftThigh => LEFT_HIP,
            PartName::LeftCalf => LEFT_KNEE,
            PartName::RightThigh => RIGHT_HIP,
            PartName::RightCalf => RIGHT_KNEE,
        }
    }

    fn rest_rotation(self) -> Rotation3<f64> {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            PartName::LeftThigh | PartName::RightThigh => Rotation3::from_euler_angles(PI, 0.0, 0.0),
            PartName::LeftUpperArm => Rotation3::from_euler_angles(0.0, FRAC_PI_2, 0.0),
            PartName::RightUpperArm => Rotation3::from_euler_angles(0.0, -FRAC_PI_2, 0.0),
            _ => Rotation3::identity(),
        }
    }

    fn joint_rotation(self, pose: &PoseVector) -> Rotation3<f64> {
        let q = &pose.0[self.dofs()];
        match q.len() {
            3 => Rotation3::from_euler_angles(q[0], q[1], q[2]),
            _ if self == PartName::Torso => Rotation3::from_euler_angles(q[0], q[1], 0.0),
            _ => {
                Rotation3::from_axis_angle(&Vector3::z_axis(), q[1])
                    * Rotation3::from_axis_angle(&Vector3::x_axis(), q[0])
            }
        }
    }
}

impl std::fmt::Display for PartName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PartName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        PartName::ALL
            .into_iter()
            .find(|p| p.as_str() == lower)
            .ok_or_else(|| format!("unknown part {s:?}"))
    }
}

/// Pose parameters; see the module docs for the layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector(pub [f64; POSE_DOF]);

impl Default for PoseVector {
    fn default() -> Self {
        Self([0.0; POSE_DOF])
    }
}

impl PoseVector {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        <[f64; POSE_DOF]>::try_from(values).ok().map(Self)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn with_translation(mut self, t: [f64; 3]) -> Self {
        self.0[ROOT_TRANSLATION].copy_from_slice(&t);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Clamps each DOF into `[lower, upper]`.
    pub fn clamp(&mut self, limits: &JointLimits) {
        for (i, v) in self.0.iter_mut().enumerate() {
            *v = v.clamp(limits.lower[i], limits.upper[i]);
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl JointLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.lower.len() != POSE_DOF || self.upper.len() != POSE_DOF {
            return Err(format!("joint limits need {POSE_DOF} lower and upper bounds"));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return Err("joint limit lower bound above upper bound".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderSpec {
    pub name: PartName,
    /// `None` attaches to the root (pelvis) frame.
    pub parent: Option<PartName>,
    pub base_radius: f64,
    pub top_radius: f64,
    pub length: f64,
    pub attach_offset: Vector3<f64>,
}

/// Validated body: all ten parts, acyclic, torso on the root frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    parts: Vec<CylinderSpec>,
    // Parents before children.
    order: Vec<PartName>,
}

pub const DEFAULT_BODY: &str = "\
# name parent base_r top_r length ox oy oz  (mm)
part torso root 150 120 550 0 0 0
part left_thigh root 80 60 430 95 0 -20
part left_calf left_thigh 55 40 420 0 0 430
part right_thigh root 80 60 430 -95 0 -20
part right_calf right_thigh 55 40 420 0 0 430
part left_upper_arm torso 50 42 290 175 0 480
part left_lower_arm left_upper_arm 40 32 270 0 0 290
part right_upper_arm torso 50 42 290 -175 0 480
part right_lower_arm right_upper_arm 40 32 270 0 0 290
part head torso 85 80 220 0 0 580
";

impl Default for BodyModel {
    fn default() -> Self {
        parse_body(DEFAULT_BODY).expect("built-in body configuration is valid")
    }
}

impl BodyModel {
    pub fn new(specs: Vec<CylinderSpec>) -> Result<Self, BodyError> {
        let mut slots: Vec<Option<CylinderSpec>> = vec![None; PART_COUNT];
        for spec in specs {
            if !(spec.base_radius > 0.0 && spec.top_radius > 0.0 && spec.length > 0.0) {
                return Err(BodyError::InvalidCylinder {
                    part: spec.name,
                    reason: "radii and length must be positive".into(),
                });
            }
            let slot = &mut slots[spec.name.index()];
            if slot.is_some() {
                return Err(BodyError::MalformedTree(format!("duplicate part {}", spec.name)));
            }
            *slot = Some(spec);
        }
        let parts: Vec<CylinderSpec> = slots
            .into_iter()
            .zip(PartName::ALL)
            .map(|(s, name)| s.ok_or_else(|| BodyError::MalformedTree(format!("missing part {name}"))))
            .collect::<Result<_, _>>()?;
        if parts[PartName::Torso.index()].parent.is_some() {
            return Err(BodyError::MalformedTree("torso must attach to the root".into()));
        }

        let mut order = Vec::with_capacity(PART_COUNT);
        let mut placed = [false; PART_COUNT];
        while order.len() < PART_COUNT {
            let before = order.len();
            for p in &parts {
                let ready = match p.parent {
                    None => true,
                    Some(parent) => placed[parent.index()],
                };
                if !placed[p.name.index()] && ready {
                    placed[p.name.index()] = true;
                    order.push(p.name);
                }
            }
            if order.len() == before {
                return Err(BodyError::MalformedTree("parent cycle".into()));
            }
        }
        Ok(Self { parts, order })
    }

    pub fn part(&self, name: PartName) -> &CylinderSpec {
        &self.parts[name.index()]
    }

    pub fn parts(&self) -> &[CylinderSpec] {
        &self.parts
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::from("# name parent base_r top_r length ox oy oz  (mm)\n");
        for p in &self.parts {
            let parent = p.parent.map_or("root", PartName::as_str);
            let _ = writeln!(
                s,
                "part {} {} {} {} {} {} {} {}",
                p.name, parent, p.base_radius, p.top_radius, p.length,
                p.attach_offset.x, p.attach_offset.y, p.attach_offset.z
            );
        }
        s
    }
}

/// Parses `part <name> <parent|root> <base_r> <top_r> <length> <ox> <oy> <oz>`
/// lines; `#` starts a comment.
pub fn parse_body(text: &str) -> Result<BodyModel, BodyError> {
    let mut specs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| BodyError::Parse { line: i + 1, reason };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 || f[0] != "part" {
            return Err(err(format!("expected 9 fields starting with `part`, got {line:?}")));
        }
        let name: PartName = f[1].parse().map_err(err)?;
        let parent = match f[2] {
            "root" => None,
            p => Some(p.parse::<PartName>().map_err(err)?),
        };
        let nums: Vec<f64> = f[3..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad number {t:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        specs.push(CylinderSpec {
            name,
            parent,
            base_radius: nums[0],
            top_radius: nums[1],
            length: nums[2],
            attach_offset: Vector3::new(nums[3], nums[4], nums[5]),
        });
    }
    BodyModel::new(specs)
}

pub fn load_body(path: &Path) -> Result<BodyModel, BodyError> {
    let text = std::fs::read_to_string(path).map_err(|source| BodyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_body(&text)
}

/// `frame,<31 values>`.
pub fn pose_csv_row(frame: usize, pose: &PoseVector) -> String {
    let mut s = frame.to_string();
    for v in pose.0 {
        let _ = write!(s, ",{v}");
    }
    s
}

pub fn parse_pose_csv(text: &str) -> Result<Vec<(usize, PoseVector)>, BodyError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| BodyError::PoseCsv { line: i + 1, reason };
        let mut f = line.split(',');
        let frame = f
            .next()
            .unwrap_or("")
            .trim()
            .parse::<usize>()
            .map_err(|e| err(format!("frame index: {e}")))?;
        let values: Vec<f64> = f
            .map(|t| t.trim().parse::<f64>().map_err(|e| err(format!("bad number {t:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        let pose = PoseVector::from_slice(&values)
            .ok_or_else(|| err(format!("expected {POSE_DOF} values, got {}", values.len())))?;
        rows.push((frame, pose));
    }
    Ok(rows)
}

/// A cylinder placed in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedCylinder {
    pub part: PartName,
    pub base_center: Point3<f64>,
    pub top_center: Point3<f64>,
    pub base_radius: f64,
    pub top_radius: f64,
}

impl PlacedCylinder {
    pub fn length(&self) -> f64 {
        (self.top_center - self.base_center).norm()
    }
}

/// World placement of all ten cylinders, in [`PartName::ALL`] order.
pub fn forward_kinematics(pose: &PoseVector, model: &BodyModel) -> Vec<PlacedCylinder> {
    let q = &pose.0;
    let root_origin = Point3::new(q[0], q[1], q[2]);
    let root_rot = Rotation3::from_euler_angles(q[3], q[4], q[5]);
    let mut frames: [(Point3<f64>, Rotation3<f64>); PART_COUNT] =
        [(Point3::origin(), Rotation3::identity()); PART_COUNT];
    let mut out = [None; PART_COUNT];
    for &name in &model.order {
        let spec = model.part(name);
        let (p_origin, p_rot) = match spec.parent {
            None => (root_origin, root_rot),
            Some(parent) => frames[parent.index()],
        };
        let origin = p_origin + p_rot * spec.attach_offset;
        let rot = p_rot * name.rest_rotation() * name.joint_rotation(pose);
        frames[name.index()] = (origin, rot);
        out[name.index()] = Some(PlacedCylinder {
            part: name,
            base_center: origin,
            top_center: origin + rot * Vector3::new(0.0, 0.0, spec.length),
            base_radius: spec.base_radius,
            top_radius: spec.top_radius,
        });
    }
    out.into_iter().map(|c| c.expect("every part is placed")).collect()
}

/// A cylinder's outline and sample points in one camera. `visible` is false
/// (and all lists empty) when any part of the cylinder is behind the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCylinder {
    pub part: PartName,
    pub camera_id: usize,
    pub visible: bool,
    pub contour: Vec<Point2<f64>>,
    pub contour_samples: Vec<Point2<f64>>,
    pub interior_samples: Vec<Point2<f64>>,
}

fn circle_points(center: &Point3<f64>, axis: &Vector3<f64>, radius: f64) -> [Point3<f64>; CIRCLE_SAMPLES] {
    // Any orthonormal basis of the plane normal to the axis.
    let helper = if axis.x.abs() <= axis.y.abs() && axis.x.abs() <= axis.z.abs() {
        Vector3::x()
    } else if axis.y.abs() <= axis.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    std::array::from_fn(|k| {
        let t = 2.0 * std::f64::consts::PI * k as f64 / CIRCLE_SAMPLES as f64;
        center + (e1 * t.cos() + e2 * t.sin()) * radius
    })
}

fn cross2(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn is_strictly_convex(poly: &[Point2<f64>]) -> bool {
    let n = poly.len();
    let mut sign = 0.0;
    for i in 0..n {
        let c = cross2(poly[(i + 1) % n] - poly[i], poly[(i + 2) % n] - poly[(i + 1) % n]);
        if c.abs() < 1e-12 || (sign != 0.0 && c.signum() != sign) {
            return false;
        }
        sign = c.signum();
    }
    true
}

/// Andrew's monotone chain; counter-clockwise, no collinear points.
pub fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2
                && cross2(hull[hull.len() - 1] - hull[hull.len() - 2], p - hull[hull.len() - 2]) <= 0.0
            {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Evenly spaced points along a closed polygon, starting at its first vertex.
fn perimeter_samples(poly: &[Point2<f64>], n: usize) -> Vec<Point2<f64>> {
    let m = poly.len();
    let edges: Vec<f64> = (0..m).map(|i| (poly[(i + 1) % m] - poly[i]).norm()).collect();
    let total: f64 = edges.iter().sum();
    if total == 0.0 {
        return vec![poly[0]; n];
    }
    let mut out = Vec::with_capacity(n);
    let mut edge = 0;
    let mut walked = 0.0;
    for k in 0..n {
        let target = total * k as f64 / n as f64;
        while edge + 1 < m && walked + edges[edge] < target {
            walked += edges[edge];
            edge += 1;
        }
        let t = if edges[edge] > 0.0 {
            ((target - walked) / edges[edge]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(poly[edge] + (poly[(edge + 1) % m] - poly[edge]) * t);
    }
    out
}

/// A rows × cols grid inside a convex polygon: rows are spread along `axis`,
/// and each row's points along the polygon's chord at that position.
fn interior_grid(poly: &[Point2<f64>], axis: Vector2<f64>, n: usize) -> Vec<Point2<f64>> {
    if n == 0 {
        return Vec::new();
    }
    let normal = Vector2::new(-axis.y, axis.x);
    let along = |p: &Point2<f64>| p.coords.dot(&axis);
    let across = |p: &Point2<f64>| p.coords.dot(&normal);
    let (tmin, tmax) = poly
        .iter()
        .map(along)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let rows = ((n as f64).sqrt().floor() as usize).max(1);
    let cols = n.div_ceil(rows);
    let m = poly.len();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let t = tmin + (tmax - tmin) * (r as f64 + 0.5) / rows as f64;
        let (mut smin, mut smax) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..m {
            let (p, q) = (&poly[i], &poly[(i + 1) % m]);
            let (tp, tq) = (along(p), along(q));
            if (tp - t) * (tq - t) <= 0.0 {
                let s = if tp == tq {
                    smin = smin.min(across(p).min(across(q)));
                    smax = smax.max(across(p).max(across(q)));
                    continue;
                } else {
                    let w = (t - tp) / (tq - tp);
                    across(p) + (across(q) - across(p)) * w
                };
                smin = smin.min(s);
                smax = smax.max(s);
            }
        }
        if !smin.is_finite() {
            let c = poly.iter().map(across).sum::<f64>() / m as f64;
            smin = c;
            smax = c;
        }
        for c in 0..cols {
            let s = smin + (smax - smin) * (c as f64 + 0.5) / cols as f64;
            out.push(Point2::from(axis * t + normal * s));
        }
    }
    out.truncate(n);
    out
}

fn project_one(
    cyl: &PlacedCylinder,
    camera: &CameraModel,
    n_contour: usize,
    n_interior: usize,
) -> ProjectedCylinder {
    let hidden = ProjectedCylinder {
        part: cyl.part,
        camera_id: camera.id(),
        visible: false,
        contour: Vec::new(),
        contour_samples: Vec::new(),
        interior_samples: Vec::new(),
    };
    let axis3 = cyl.top_center - cyl.base_center;
    let len = axis3.norm();
    if len == 0.0 {
        return hidden;
    }
    let axis3 = axis3 / len;
    let mut rings = [[Point2::origin(); CIRCLE_SAMPLES]; 2];
    for (ring, (center, radius)) in rings.iter_mut().zip([
        (cyl.base_center, cyl.base_radius),
        (cyl.top_center, cyl.top_radius),
    ]) {
        for (slot, p) in ring.iter_mut().zip(circle_points(&center, &axis3, radius)) {
            match camera.project(&p) {
                Ok(pr) if pr.depth > 0.0 => *slot = pr.pixel,
                _ => return hidden,
            }
        }
    }
    let (Ok(b), Ok(t)) = (camera.project(&cyl.base_center), camera.project(&cyl.top_center)) else {
        return hidden;
    };
    let axis2 = t.pixel - b.pixel;

    let quad = (axis2.norm() > 1e-9).then(|| {
        let a = axis2.normalize();
        let n = Vector2::new(-a.y, a.x);
        let extremes = |ring: &[Point2<f64>; CIRCLE_SAMPLES]| {
            let key = |p: &&Point2<f64>| p.coords.dot(&n);
            let lo = *ring.iter().min_by(|p, q| key(p).total_cmp(&key(q))).unwrap();
            let hi = *ring.iter().max_by(|p, q| key(p).total_cmp(&key(q))).unwrap();
            (lo, hi)
        };
        let (b_lo, b_hi) = extremes(&rings[0]);
        let (t_lo, t_hi) = extremes(&rings[1]);
        (vec![b_lo, b_hi, t_hi, t_lo], a)
    });
    let (contour, axis) = match quad {
        Some((q, a)) if is_strictly_convex(&q) => (q, a),
        // End-on or nearly so: the outline is the hull of the two ellipses.
        other => {
            let all: Vec<Point2<f64>> = rings.iter().flatten().copied().collect();
            let a = other.map_or(Vector2::x(), |(_, a)| a);
            (convex_hull(&all), a)
        }
    };
    ProjectedCylinder {
        part: cyl.part,
        camera_id: camera.id(),
        visible: true,
        contour_samples: perimeter_samples(&contour, n_contour),
        interior_samples: interior_grid(&contour, axis, n_interior),
        contour,
    }
}

/// Projects each placed cylinder into `camera`.
pub fn project_cylinders(
    placed: &[PlacedCylinder],
    camera: &CameraModel,
    n_contour: usize,
    n_interior: usize,
) -> Vec<ProjectedCylinder> {
    placed
        .iter()
        .map(|c| project_one(c, camera, n_contour, n_interior))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Matrix3x4};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn random_pose(seed: u64) -> PoseVector {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p = PoseVector::zeros();
        for (i, v) in p.0.iter_mut().enumerate() {
            *v = if i < 3 { rng.random_range(-500.0..500.0) } else { rng.random_range(-1.2..1.2) };
        }
        p
    }

    #[test]
    fn default_body_parses_and_round_trips() {
        let body = BodyModel::default();
        assert_eq!(body.parts().len(), 10);
        assert_eq!(parse_body(&body.to_config_string()).unwrap(), body);
        assert_eq!("TORSO".parse::<PartName>().unwrap(), PartName::Torso);
    }

    #[test]
    fn dof_layout_covers_31() {
        let mut seen = [0; POSE_DOF];
        for r in [ROOT_TRANSLATION, ROOT_ORIENTATION] {
            r.for_each(|i| seen[i] += 1);
        }
        for p in PartName::ALL {
            p.dofs().for_each(|i| seen[i] += 1);
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn malformed_trees() {
        let cyc = DEFAULT_BODY.replace("part torso root", "part torso head");
        assert!(matches!(parse_body(&cyc), Err(BodyError::MalformedTree(_))));
        let cycle2 = DEFAULT_BODY
            .replace("part left_thigh root", "part left_thigh left_calf");
        assert!(matches!(parse_body(&cycle2), Err(BodyError::MalformedTree(_))));
        let missing: String = DEFAULT_BODY.lines().filter(|l| !l.contains("part head")).collect::<Vec<_>>().join("\n");
        assert!(matches!(parse_body(&missing), Err(BodyError::MalformedTree(_))));
        let dup = format!("{DEFAULT_BODY}part head torso 1 1 1 0 0 0\n");
        assert!(matches!(parse_body(&dup), Err(BodyError::MalformedTree(_))));
        assert!(matches!(parse_body("part torso root 1 1"), Err(BodyError::Parse { line: 1, .. })));
    }

    #[test]
    fn zero_pose_is_t_pose() {
        let placed = forward_kinematics(&PoseVector::zeros(), &BodyModel::default());
        let c = |p: PartName| placed[p.index()];
        assert_relative_eq!(c(PartName::Torso).top_center, Point3::new(0.0, 0.0, 550.0), epsilon = 1e-9);
        assert_relative_eq!(c(PartName::Head).base_center, Point3::new(0.0, 0.0, 580.0), epsilon = 1e-9);
        assert_relative_eq!(c(PartName::LeftUpperArm).top_center, Point3::new(465.0, 0.0, 480.0), epsilon = 1e-9);
        assert_relative_eq!(c(PartName::RightLowerArm).top_center, Point3::new(-735.0, 0.0, 480.0), epsilon = 1e-9);
        assert_relative_eq!(c(PartName::LeftCalf).top_center, Point3::new(95.0, 0.0, -870.0), epsilon = 1e-9);
    }

    #[test]
    fn root_translation_shifts_everything() {
        let body = BodyModel::default();
        let pose = random_pose(3);
        let mut moved = pose;
        moved.0[0] += 1.0;
        for (a, b) in forward_kinematics(&pose, &body).iter().zip(forward_kinematics(&moved, &body)) {
            assert_relative_eq!(b.base_center - a.base_center, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-9);
            assert_relative_eq!(b.top_center - a.top_center, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn knee_flex_against_rotation_chain() {
        let body = BodyModel::default();
        let mut pose = PoseVector::zeros();
        pose.0[LEFT_KNEE.start] = FRAC_PI_2;
        let placed = forward_kinematics(&pose, &body);
        let thigh = placed[PartName::LeftThigh.index()];
        let calf = placed[PartName::LeftCalf.index()];
        let ta = thigh.top_center - thigh.base_center;
        let ca = calf.top_center - calf.base_center;
        assert!(ta.dot(&ca).abs() < 1e-9);

        // Explicit matrices: thigh rest Rx(pi), knee Rx(pi/2).
        let rx = |a: f64| Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos());
        let thigh_r = rx(std::f64::consts::PI);
        let hip = Vector3::new(95.0, 0.0, -20.0);
        let knee = hip + thigh_r * Vector3::new(0.0, 0.0, 430.0);
        let ankle = knee + thigh_r * rx(FRAC_PI_2) * Vector3::new(0.0, 0.0, 420.0);
        assert_relative_eq!(calf.base_center.coords, knee, epsilon = 1e-9);
        assert_relative_eq!(calf.top_center.coords, ankle, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn lengths_are_rigid(seed in any::<u64>()) {
            let body = BodyModel::default();
            for c in forward_kinematics(&random_pose(seed), &body) {
                let l = body.part(c.part).length;
                prop_assert!((c.length() - l).abs() <= 1e-9 * l);
            }
        }
    }

    #[test]
    fn no_dead_parameters() {
        let body = BodyModel::default();
        let pose = random_pose(11);
        let base = forward_kinematics(&pose, &body);
        for d in 0..POSE_DOF {
            let mut p = pose;
            p.0[d] += 0.05;
            let moved = forward_kinematics(&p, &body);
            let changed = base.iter().zip(&moved).any(|(a, b)| {
                (a.base_center - b.base_center).norm() > 1e-6 || (a.top_center - b.top_center).norm() > 1e-6
            });
            assert!(changed, "DOF {d} has no effect");
        }
    }

    fn look_camera(f: f64, cx: f64, cy: f64, d: f64) -> CameraModel {
        // Camera at (0, 0, -d) looking along +z.
        let m = Matrix3x4::new(f, 0.0, cx, cx * d, 0.0, f, cy, cy * d, 0.0, 0.0, 1.0, d);
        CameraModel::new(0, 640, 480, m).unwrap()
    }

    fn cylinder(base: [f64; 3], top: [f64; 3], r0: f64, r1: f64) -> PlacedCylinder {
        PlacedCylinder {
            part: PartName::Torso,
            base_center: Point3::from(base),
            top_center: Point3::from(top),
            base_radius: r0,
            top_radius: r1,
        }
    }

    #[test]
    fn broadside_is_symmetric_trapezoid() {
        let (f, d, r) = (500.0, 3000.0, 50.0);
        let cam = look_camera(f, 320.0, 240.0, d);
        let cyl = cylinder([-200.0, 0.0, 0.0], [200.0, 0.0, 0.0], r, r);
        let pc = &project_cylinders(&[cyl], &cam, 16, 25)[0];
        assert!(pc.visible);
        assert_eq!(pc.contour.len(), 4);
        let expected = f * r / d;
        for p in &pc.contour {
            let half = (p.y - 240.0).abs();
            assert!((half - expected).abs() / expected < 0.01, "{half} vs {expected}");
        }
        // mirror symmetry about the image center column
        let xs: Vec<f64> = pc.contour.iter().map(|p| p.x - 320.0).collect();
        assert_relative_eq!(xs[0], -xs[3], epsilon = 1e-9);
        assert_relative_eq!(xs[1], -xs[2], epsilon = 1e-9);
        assert_eq!(pc.contour_samples.len(), 16);
        assert_eq!(pc.interior_samples.len(), 25);
        for s in &pc.interior_samples {
            assert!((s.y - 240.0).abs() < expected && (s.x - 320.0).abs() < f * 200.0 / d);
        }
    }

    #[test]
    fn behind_camera_is_empty() {
        let cam = look_camera(500.0, 320.0, 240.0, 3000.0);
        let cyl = cylinder([0.0, 0.0, -4000.0], [0.0, 100.0, -4000.0], 50.0, 50.0);
        let pc = &project_cylinders(&[cyl], &cam, 16, 25)[0];
        assert!(!pc.visible);
        assert!(pc.contour_samples.is_empty() && pc.interior_samples.is_empty());
    }

    #[test]
    fn end_on_view_is_the_near_circle() {
        let (f, d) = (500.0, 3000.0);
        let cam = look_camera(f, 320.0, 240.0, d);
        // axis along the optical axis, near end at z = -500 (depth 2500)
        let cyl = cylinder([0.0, 0.0, -500.0], [0.0, 0.0, 300.0], 60.0, 40.0);
        let pc = &project_cylinders(&[cyl], &cam, 16, 25)[0];
        assert!(pc.visible);
        let radius = f * 60.0 / 2500.0;
        for p in &pc.contour {
            let r = ((p.x - 320.0).powi(2) + (p.y - 240.0).powi(2)).sqrt();
            assert_relative_eq!(r, radius, epsilon = 1e-9);
        }
        assert!(pc.interior_samples.iter().all(|p| p.x.is_finite() && p.y.is_finite()));
        assert_eq!(pc.contour_samples.len(), 16);
    }

    #[test]
    fn principal_point_shift_translates_samples() {
        let body = BodyModel::default();
        let placed = forward_kinematics(&random_pose(5).with_translation([0.0, 0.0, 0.0]), &body);
        let a = project_cylinders(&placed, &look_camera(450.0, 320.0, 240.0, 4000.0), 16, 25);
        let b = project_cylinders(&placed, &look_camera(450.0, 337.5, 228.0, 4000.0), 16, 25);
        let shift = Vector2::new(17.5, -12.0);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.visible, pb.visible);
            for (p, q) in pa.contour_samples.iter().zip(&pb.contour_samples)
                .chain(pa.interior_samples.iter().zip(&pb.interior_samples))
            {
                assert_relative_eq!(q - p, shift, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn pose_csv() {
        let mut p = PoseVector::zeros();
        p.0[12] = 0.123456789;
        p.0[0] = -1.5;
        let row = pose_csv_row(7, &p);
        assert!(row.starts_with("7,-1.5,0,"));
        let back = parse_pose_csv(&format!("{row}\n")).unwrap();
        assert_eq!(back, vec![(7, p)]);
        assert!(parse_pose_csv("0,1,2\n").is_err());
    }

    #[test]
    fn wrapping() {
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-0.25), -0.25);
    }

    #[test]
    fn hull_square() {
        let pts: Vec<_> = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)]
            .iter()
            .map(|&(x, y)| Point2::new(x, y))
            .collect();
        assert_eq!(convex_hull(&pts).len(), 4);
    }
}
