//! Dense 2-D rasters and their file formats.
//!
//! Pixel `(x, y)` has its center at the continuous coordinate `(x, y)` and
//! covers `[x - 0.5, x + 0.5) × [y - 0.5, y + 0.5)`. Projections are
//! continuous; rounding to a pixel index is round-half-up.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::ExtendedColorType;
use thiserror::Error;

pub use image::RgbImage;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("malformed float map {path}: {reason}")]
    Format { path: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A row-major single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Plane<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Plane<T> {
    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer size mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let data = (0..width * height)
            .map(|i| f(i % width, i / width))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    /// Whether the continuous point falls on a pixel of this raster.
    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        contains(self.width, self.height, u, v)
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

#[inline]
pub(crate) fn contains(width: usize, height: usize, u: f64, v: f64) -> bool {
    u >= -0.5 && v >= -0.5 && u < width as f64 - 0.5 && v < height as f64 - 0.5
}

/// Nearest pixel under round-half-up, or `None` outside the raster.
#[inline]
pub fn nearest_pixel(width: usize, height: usize, u: f64, v: f64) -> Option<(usize, usize)> {
    if !contains(width, height, u, v) {
        return None;
    }
    let x = (u + 0.5).floor() as usize;
    let y = (v + 0.5).floor() as usize;
    Some((x.min(width - 1), y.min(height - 1)))
}

/// Corner pixels and weights for bilinear interpolation with the continuous
/// coordinate clamped to the pixel-center hull.
#[inline]
fn bilinear_taps(width: usize, height: usize, u: f64, v: f64) -> [(usize, f64); 4] {
    let u = u.clamp(0.0, (width - 1) as f64);
    let v = v.clamp(0.0, (height - 1) as f64);
    let x0 = (u.floor() as usize).min(width - 1);
    let y0 = (v.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ]
}

impl Plane<f64> {
    /// Bilinear sample, clamped at the borders.
    pub fn sample_clamped(&self, u: f64, v: f64) -> f64 {
        bilinear_taps(self.width, self.height, u, v)
            .iter()
            .map(|&(i, w)| self.data[i] * w)
            .sum()
    }

    /// Bilinear sample; points off the raster read 0.
    pub fn sample_or_zero(&self, u: f64, v: f64) -> f64 {
        if self.contains(u, v) {
            self.sample_clamped(u, v)
        } else {
            0.0
        }
    }
}

/// Bilinear RGB sample, clamped at the borders.
pub fn sample_rgb(img: &RgbImage, u: f64, v: f64) -> [f64; 3] {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut out = [0.0; 3];
    for (i, wt) in bilinear_taps(w, h, u, v) {
        for (c, o) in out.iter_mut().enumerate() {
            *o += raw[i * 3 + c] as f64 * wt;
        }
    }
    out
}

/// Reads a binary P6 pixmap.
pub fn read_ppm(path: &Path) -> Result<RgbImage, ImageError> {
    let reader = image::ImageReader::with_format(
        BufReader::new(File::open(path).map_err(io_err(path))?),
        image::ImageFormat::Pnm,
    );
    let decoded = reader.decode().map_err(|source| ImageError::Decode {
        path: path.display().to_string(),
        source,
    })?;
    Ok(decoded.into_rgb8())
}

/// Writes a binary P6 pixmap with maxval 255.
pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<(), ImageError> {
    encode_pnm(
        path,
        img.as_raw(),
        img.width() as usize,
        img.height() as usize,
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        ExtendedColorType::Rgb8,
    )
}

/// Reads a binary P5 graymap.
pub fn read_pgm(path: &Path) -> Result<Plane<u8>, ImageError> {
    let reader = image::ImageReader::with_format(
        BufReader::new(File::open(path).map_err(io_err(path))?),
        image::ImageFormat::Pnm,
    );
    let decoded = reader.decode().map_err(|source| ImageError::Decode {
        path: path.display().to_string(),
        source,
    })?;
    let gray = decoded.into_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(Plane::from_vec(w, h, gray.into_raw()))
}

/// Writes a binary P5 graymap with maxval 255.
pub fn write_pgm(path: &Path, plane: &Plane<u8>) -> Result<(), ImageError> {
    encode_pnm(
        path,
        plane.as_slice(),
        plane.width(),
        plane.height(),
        PnmSubtype::Graymap(SampleEncoding::Binary),
        ExtendedColorType::L8,
    )
}

fn encode_pnm(
    path: &Path,
    bytes: &[u8],
    width: usize,
    height: usize,
    subtype: PnmSubtype,
    color: ExtendedColorType,
) -> Result<(), ImageError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .encode(bytes, width as u32, height as u32, color)
        .map_err(|source| ImageError::Decode {
            path: path.display().to_string(),
            source,
        })?;
    out.flush().map_err(io_err(path))
}

/// A {0,1} mask stored as 0/255 gray.
pub fn mask_to_gray(mask: &Plane<u8>) -> Plane<u8> {
    mask.map(|&v| if v != 0 { 255 } else { 0 })
}

/// Gray values at or above 128 become 1.
pub fn gray_to_mask(gray: &Plane<u8>) -> Plane<u8> {
    gray.map(|&v| u8::from(v >= 128))
}

/// Visualization quantization of a `[0,1]` map: `floor(255 v + 0.5)`.
pub fn quantize_unit(plane: &Plane<f64>) -> Plane<u8> {
    plane.map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
}

const F32_HEADER_LEN: usize = 16;

/// Lossless float map: 16-byte ASCII header `F32W<width>H<height>` padded
/// with spaces, then little-endian `f32` samples in row-major order.
pub fn write_f32_map(path: &Path, plane: &Plane<f64>) -> Result<(), ImageError> {
    let header = format!("F32W{}H{}", plane.width(), plane.height());
    if header.len() > F32_HEADER_LEN {
        return Err(ImageError::Format {
            path: path.display().to_string(),
            reason: format!("dimensions too large for header: {header}"),
        });
    }
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut buf = Vec::with_capacity(F32_HEADER_LEN + plane.as_slice().len() * 4);
    buf.extend_from_slice(format!("{header:<16}").as_bytes());
    for &v in plane.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_f32_map(path: &Path) -> Result<Plane<f64>, ImageError> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    let bad = |reason: &str| ImageError::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < F32_HEADER_LEN {
        return Err(bad("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[..F32_HEADER_LEN])
        .map_err(|_| bad("header is not ASCII"))?
        .trim_end();
    let dims = header
        .strip_prefix("F32W")
        .and_then(|rest| rest.split_once('H'))
        .and_then(|(w, h)| Some((w.parse::<usize>().ok()?, h.parse::<usize>().ok()?)))
        .ok_or_else(|| bad("expected F32W<width>H<height>"))?;
    let body = &bytes[F32_HEADER_LEN..];
    if body.len() != dims.0 * dims.1 * 4 {
        return Err(bad("payload size does not match header"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Plane::from_vec(dims.0, dims.1, data))
}
