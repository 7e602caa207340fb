//! Calibrated pinhole cameras.
//!
//! World coordinates are millimeters in a right-handed frame with +z up.
//! A camera maps homogeneous world points to homogeneous pixels through a
//! 3×4 projection matrix; the third homogeneous coordinate is the depth and
//! points with depth ≤ 0 are behind the camera.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Point2, Point3, Vector3, Vector4};
use thiserror::Error;

/// Homogeneous scales below this magnitude are treated as points at infinity.
pub const MIN_HOMOGENEOUS_SCALE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point projects to infinity (w = {w:e})")]
    PointAtInfinity { w: f64 },
    #[error("calibration parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("camera {id} has a singular 3x3 block")]
    DegenerateCamera { id: usize },
    #[error("camera {id} has zero image size")]
    EmptyImage { id: usize },
    #[error("camera ids must be 0..{count} in order, found {found} at position {position}")]
    BadCameraId {
        count: usize,
        position: usize,
        found: usize,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Continuous pixel position and the signed homogeneous depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Point2<f64>,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    id: usize,
    width: usize,
    height: usize,
    projection: Matrix3x4<f64>,
    // Inverse of the left 3x3 block and the optical center, cached for
    // back-projection.
    inv_block: Matrix3<f64>,
    center: Point3<f64>,
}

impl CameraModel {
    pub fn new(
        id: usize,
        width: usize,
        height: usize,
        projection: Matrix3x4<f64>,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::EmptyImage { id });
        }
        let block: Matrix3<f64> = projection.fixed_view::<3, 3>(0, 0).into_owned();
        let scale = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 || (block.determinant() / scale.powi(3)).abs() < 1e-12 {
            return Err(GeometryError::DegenerateCamera { id });
        }
        let inv_block = block
            .try_inverse()
            .ok_or(GeometryError::DegenerateCamera { id })?;
        let center = Point3::from(-(inv_block * projection.column(3)));
        Ok(Self {
            id,
            width,
            height,
            projection,
            inv_block,
            center,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        self.center
    }

    /// Direction of the ray through continuous pixel `(u, v)`. Points
    /// `center + t * dir` with `t > 0` project to `(u, v)` with depth `t`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        self.inv_block * Vector3::new(u, v, 1.0)
    }

    pub fn project(&self, point: &Point3<f64>) -> Result<Projection, GeometryError> {
        project_point(self, point)
    }

    /// Projection of a point that is in front of the camera and lands on
    /// the image, otherwise `None`.
    pub fn project_visible(&self, point: &Point3<f64>) -> Option<Point2<f64>> {
        let p = self.project(point).ok()?;
        (p.depth > 0.0 && crate::image::contains(self.width, self.height, p.pixel.x, p.pixel.y))
            .then_some(p.pixel)
    }
}

/// Projects a world point (mm) into `camera`.
pub fn project_point(
    camera: &CameraModel,
    point: &Point3<f64>,
) -> Result<Projection, GeometryError> {
    let h = camera.projection * Vector4::new(point.x, point.y, point.z, 1.0);
    let w = h.z;
    if w.abs() < MIN_HOMOGENEOUS_SCALE {
        return Err(GeometryError::PointAtInfinity { w });
    }
    Ok(Projection {
        pixel: Point2::new(h.x / w, h.y / w),
        depth: w,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<CameraModel>,
}

impl CameraRig {
    /// Ids must run 0, 1, .. in list order.
    pub fn new(cameras: Vec<CameraModel>) -> Result<Self, GeometryError> {
        for (position, cam) in cameras.iter().enumerate() {
            if cam.id != position {
                return Err(GeometryError::BadCameraId {
                    count: cameras.len(),
                    position,
                    found: cam.id,
                });
            }
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[CameraModel] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CameraModel> {
        self.cameras.iter()
    }

    pub fn to_calibration_string(&self) -> String {
        let mut s = format!("ncams {}\n", self.cameras.len());
        for cam in &self.cameras {
            let _ = writeln!(s, "cam {} {} {}", cam.id, cam.width, cam.height);
            for r in 0..3 {
                let row: Vec<String> = (0..4).map(|c| format!("{}", cam.projection[(r, c)])).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }
}

impl<'a> IntoIterator for &'a CameraRig {
    type Item = &'a CameraModel;
    type IntoIter = std::slice::Iter<'a, CameraModel>;

    fn into_iter(self) -> Self::IntoIter {
        self.cameras.iter()
    }
}

/// Loads a calibration file.
///
/// ```text
/// ncams <K>
/// cam <id> <width> <height>
/// <p00> <p01> <p02> <p03>
/// <p10> <p11> <p12> <p13>
/// <p20> <p21> <p22> <p23>
/// ...
/// ```
///
/// Blank lines are ignored.
pub fn load_rig(path: &Path) -> Result<CameraRig, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_rig(&text)
}

pub fn parse_rig(text: &str) -> Result<CameraRig, GeometryError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let err = |line: usize, reason: String| GeometryError::Parse { line, reason };

    let (line, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty calibration file".into()))?;
    let count = match header.split_whitespace().collect::<Vec<_>>()[..] {
        ["ncams", k] => k
            .parse::<usize>()
            .map_err(|e| err(line, format!("bad camera count {k:?}: {e}")))?,
        _ => return Err(err(line, format!("expected `ncams <K>`, got {header:?}"))),
    };

    let mut cameras = Vec::with_capacity(count);
    for _ in 0..count {
        let (line, head) = lines
            .next()
            .ok_or_else(|| err(0, format!("expected {count} cameras, found {}", cameras.len())))?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let (id, width, height) = match fields[..] {
            ["cam", id, w, h] => {
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|e| err(line, format!("bad integer {s:?}: {e}")))
                };
                (parse(id)?, parse(w)?, parse(h)?)
            }
            _ => {
                return Err(err(
                    line,
                    format!("expected `cam <id> <width> <height>`, got {head:?}"),
                ))
            }
        };
        let mut m = Matrix3x4::zeros();
        for r in 0..3 {
            let (line, row) = lines
                .next()
                .ok_or_else(|| err(line, format!("camera {id}: missing matrix row {r}")))?;
            let values: Vec<f64> = row
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| err(line, format!("bad number {t:?}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            if values.len() != 4 {
                return Err(err(
                    line,
                    format!("matrix row needs 4 numbers, found {}", values.len()),
                ));
            }
            for (c, v) in values.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        cameras.push(CameraModel::new(id, width, height, m)?);
    }
    if let Some((line, extra)) = lines.next() {
        return Err(err(line, format!("unexpected trailing content {extra:?}")));
    }
    CameraRig::new(cameras)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_camera() -> CameraModel {
        CameraModel::new(0, 640, 480, Matrix3x4::identity()).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_origin() {
        let p = project_point(&identity_camera(), &Point3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(p.pixel, Point2::new(0.0, 0.0));
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn perspective_divide() {
        let p = project_point(&identity_camera(), &Point3::new(2.0, 4.0, 2.0)).unwrap();
        assert_eq!(p.pixel, Point2::new(1.0, 2.0));
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn point_at_infinity() {
        let r = project_point(&identity_camera(), &Point3::new(1.0, 1.0, 0.0));
        assert!(matches!(r, Err(GeometryError::PointAtInfinity { .. })));
    }

    #[test]
    fn behind_camera_has_negative_depth() {
        let p = project_point(&identity_camera(), &Point3::new(1.0, 1.0, -3.0)).unwrap();
        assert!(p.depth < 0.0);
        assert!(identity_camera()
            .project_visible(&Point3::new(0.0, 0.0, -3.0))
            .is_none());
    }

    #[test]
    fn degenerate_block_rejected() {
        let mut m = Matrix3x4::identity();
        m[(2, 2)] = 0.0;
        assert!(matches!(
            CameraModel::new(3, 10, 10, m),
            Err(GeometryError::DegenerateCamera { id: 3 })
        ));
    }

    #[test]
    fn ray_direction_back_projects() {
        let m = Matrix3x4::new(
            500.0, 3.0, 320.0, 10.0, 0.0, 480.0, 240.0, -20.0, 0.01, 0.02, 1.0, 2000.0,
        );
        let cam = CameraModel::new(0, 640, 480, m).unwrap();
        let d = cam.ray_direction(100.0, 50.0);
        let p = cam.project(&(cam.center() + d * 3.5)).unwrap();
        assert_relative_eq!(p.pixel.x, 100.0, epsilon = 1e-9);
        assert_relative_eq!(p.pixel.y, 50.0, epsilon = 1e-9);
        assert_relative_eq!(p.depth, 3.5, epsilon = 1e-9);
    }

    #[test]
    fn parse_single_camera() {
        let rig = parse_rig("ncams 1\ncam 0 640 480\n1 0 0 0\n0 1 0 0\n0 0 1 0\n").unwrap();
        assert_eq!(rig.len(), 1);
        assert_eq!(rig.cameras()[0].width(), 640);
        assert_eq!(rig.cameras()[0].height(), 480);
    }

    #[test]
    fn eleven_numbers_is_a_parse_error() {
        let text = "ncams 1\ncam 0 640 480\n1 0 0 0\n0 1 0\n0 0 1 0\n";
        match parse_rig(text) {
            Err(GeometryError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn singular_camera_in_file() {
        let text = "ncams 1\ncam 0 640 480\n1 0 0 0\n2 0 0 0\n0 0 1 0\n";
        assert!(matches!(
            parse_rig(text),
            Err(GeometryError::DegenerateCamera { id: 0 })
        ));
    }

    #[test]
    fn ids_must_be_contiguous() {
        let text = "ncams 2\ncam 0 4 4\n1 0 0 0\n0 1 0 0\n0 0 1 0\ncam 2 4 4\n1 0 0 0\n0 1 0 0\n0 0 1 0\n";
        assert!(matches!(
            parse_rig(text),
            Err(GeometryError::BadCameraId { found: 2, .. })
        ));
    }

    #[test]
    fn calibration_text_round_trips() {
        let cams = (0..8)
            .map(|i| {
                let mut m = Matrix3x4::identity();
                m[(0, 3)] = i as f64 * 0.1 + 1.0 / 3.0;
                CameraModel::new(i, 320 + i, 240, m).unwrap()
            })
            .collect();
        let rig = CameraRig::new(cams).unwrap();
        let back = parse_rig(&rig.to_calibration_string()).unwrap();
        assert_eq!(back, rig);
        assert_eq!(back.cameras()[5].width(), 325);
    }
}
