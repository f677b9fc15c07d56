//! Value types shared by every stage of the pipeline: minutiae, angles,
//! affine transforms and rasters.
//!
//! Angle convention: a direction `theta` corresponds to the pixel-space unit
//! vector `(cos theta, sin theta)` with `x` to the right and `y` down. Angles
//! grow from `+x` towards `+y`. Radians are used everywhere except the text
//! minutiae format, which stores degrees.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};

/// Position tolerance (pixels) under which two minutiae are duplicates.
pub const DUPLICATE_POS_TOL: f64 = 1.0;
/// Direction tolerance (radians) under which two minutiae are duplicates.
pub const DUPLICATE_ANGLE_TOL: f64 = 0.05;

/// Maps any finite angle into `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly TAU
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Signed minimal circular difference `a - b`, in `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// A ridge ending or bifurcation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMinutia", into = "RawMinutia")]
pub struct Minutia {
    x: f64,
    y: f64,
    theta: f64,
}

#[derive(Serialize, Deserialize)]
struct RawMinutia {
    x: f64,
    y: f64,
    theta: f64,
}

impl TryFrom<RawMinutia> for Minutia {
    type Error = DmdError;
    fn try_from(r: RawMinutia) -> Result<Self> {
        Minutia::try_new(r.x, r.y, r.theta)
    }
}

impl From<Minutia> for RawMinutia {
    fn from(m: Minutia) -> Self {
        RawMinutia {
            x: m.x,
            y: m.y,
            theta: m.theta,
        }
    }
}

impl Minutia {
    /// Builds a minutia, normalizing `theta` into `[0, 2π)`.
    ///
    /// Panics on non-finite input; use [`Minutia::try_new`] for untrusted data.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self::try_new(x, y, theta).expect("minutia fields must be finite")
    }

    pub fn try_new(x: f64, y: f64, theta: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
            return Err(DmdError::InvalidArgument(format!(
                "non-finite minutia ({x}, {y}, {theta})"
            )));
        }
        Ok(Self {
            x,
            y,
            theta: normalize_angle(theta),
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn distance(&self, other: &Minutia) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Maps the position through `t` and rotates the direction by the rotation
    /// component of its linear part.
    pub fn transformed(&self, t: &Affine2D) -> Minutia {
        let [x, y] = t.apply([self.x, self.y]);
        Minutia::new(x, y, self.theta + t.rotation_angle())
    }

    fn is_duplicate_of(&self, other: &Minutia) -> bool {
        self.distance(other) <= DUPLICATE_POS_TOL && angle_diff(self.theta, other.theta).abs() <= DUPLICATE_ANGLE_TOL
    }
}

/// Applies an affine transform to a minutia.
pub fn transform_minutia(m: &Minutia, t: &Affine2D) -> Minutia {
    m.transformed(t)
}

/// Ordered minutiae of one impression. Index order is identity within a match.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MinutiaSet {
    minutiae: Vec<Minutia>,
    source_id: String,
}

impl MinutiaSet {
    /// Builds a set, rejecting duplicated minutiae.
    pub fn new(minutiae: Vec<Minutia>, source_id: impl Into<String>) -> Result<Self> {
        for (i, a) in minutiae.iter().enumerate() {
            if let Some(j) = minutiae[..i].iter().position(|b| a.is_duplicate_of(b)) {
                return Err(DmdError::InvalidArgument(format!(
                    "minutiae {j} and {i} are duplicates"
                )));
            }
        }
        Ok(Self {
            minutiae,
            source_id: source_id.into(),
        })
    }

    /// Builds a set, silently keeping only the first of any duplicated group.
    pub fn dedup(minutiae: impl IntoIterator<Item = Minutia>, source_id: impl Into<String>) -> Self {
        let mut kept: Vec<Minutia> = Vec::new();
        for m in minutiae {
            if !kept.iter().any(|k| m.is_duplicate_of(k)) {
                kept.push(m);
            }
        }
        Self {
            minutiae: kept,
            source_id: source_id.into(),
        }
    }

    pub fn empty(source_id: impl Into<String>) -> Self {
        Self {
            minutiae: Vec::new(),
            source_id: source_id.into(),
        }
    }

    pub fn as_slice(&self) -> &[Minutia] {
        &self.minutiae
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Minutia> {
        self.minutiae.iter()
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Minutia> {
        self.minutiae.get(i)
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn into_vec(self) -> Vec<Minutia> {
        self.minutiae
    }

    /// Parses the whitespace separated `x y theta_degrees` text format.
    pub fn parse_text(text: &str, source_id: impl Into<String>) -> Result<Self> {
        let mut out = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(DmdError::Parse {
                    line: lineno + 1,
                    message: format!("expected 3 fields, found {}", fields.len()),
                });
            }
            let mut vals = [0.0; 3];
            for (v, f) in vals.iter_mut().zip(&fields) {
                *v = f.parse::<f64>().map_err(|e| DmdError::Parse {
                    line: lineno + 1,
                    message: format!("{f:?}: {e}"),
                })?;
            }
            let m = Minutia::try_new(vals[0], vals[1], vals[2].to_radians()).map_err(|e| DmdError::Parse {
                line: lineno + 1,
                message: e.to_string(),
            })?;
            out.push(m);
        }
        Self::new(out, source_id)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# x y theta_degrees ({})", self.source_id);
        for m in &self.minutiae {
            let _ = writeln!(s, "{:.4} {:.4} {:.4}", m.x, m.y, m.theta.to_degrees());
        }
        s
    }
}

impl<'a> IntoIterator for &'a MinutiaSet {
    type Item = &'a Minutia;
    type IntoIter = std::slice::Iter<'a, Minutia>;
    fn into_iter(self) -> Self::IntoIter {
        self.minutiae.iter()
    }
}

/// `p -> linear * p + translation`, with a non-singular linear part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2D {
    linear: [[f64; 2]; 2],
    translation: [f64; 2],
}

pub const MIN_ABS_DET: f64 = 1e-9;

impl Affine2D {
    pub fn new(linear: [[f64; 2]; 2], translation: [f64; 2]) -> Result<Self> {
        let det = linear[0][0] * linear[1][1] - linear[0][1] * linear[1][0];
        if !(det.abs() > MIN_ABS_DET) || translation.iter().any(|v| !v.is_finite()) {
            return Err(DmdError::SingularTransform(det));
        }
        Ok(Self { linear, translation })
    }

    pub fn identity() -> Self {
        Self {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [0.0, 0.0],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            linear: [[1.0, 0.0], [0.0, 1.0]],
            translation: [tx, ty],
        }
    }

    /// Rotation by `angle` about the origin.
    pub fn rotation(angle: f64) -> Self {
        Self::similarity(1.0, angle, 0.0, 0.0)
    }

    /// Rotation by `angle` about `(cx, cy)`.
    pub fn rotation_about(angle: f64, cx: f64, cy: f64) -> Self {
        Self::translation(cx, cy)
            .then_after(&Self::rotation(angle))
            .then_after(&Self::translation(-cx, -cy))
    }

    /// Scale then rotate then translate. Panics if `scale == 0`.
    pub fn similarity(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new([[scale * c, -scale * s], [scale * s, scale * c]], [tx, ty])
            .expect("similarity scale must be non-zero")
    }

    pub fn linear(&self) -> [[f64; 2]; 2] {
        self.linear
    }

    pub fn translation_part(&self) -> [f64; 2] {
        self.translation
    }

    pub fn det(&self) -> f64 {
        self.linear[0][0] * self.linear[1][1] - self.linear[0][1] * self.linear[1][0]
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let l = &self.linear;
        [
            l[0][0] * p[0] + l[0][1] * p[1] + self.translation[0],
            l[1][0] * p[0] + l[1][1] * p[1] + self.translation[1],
        ]
    }

    pub fn apply_vector(&self, v: [f64; 2]) -> [f64; 2] {
        let l = &self.linear;
        [l[0][0] * v[0] + l[0][1] * v[1], l[1][0] * v[0] + l[1][1] * v[1]]
    }

    /// Angle of the rotation closest to the linear part (2D polar decomposition).
    pub fn rotation_angle(&self) -> f64 {
        let l = &self.linear;
        (l[1][0] - l[0][1]).atan2(l[0][0] + l[1][1])
    }

    /// `self ∘ inner`: applies `inner` first, then `self`.
    pub fn then_after(&self, inner: &Affine2D) -> Affine2D {
        let a = &self.linear;
        let b = &inner.linear;
        let mut linear = [[0.0; 2]; 2];
        for (r, row) in linear.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        let t = self.apply(inner.translation);
        Affine2D { linear, translation: t }
    }

    pub fn inverse(&self) -> Affine2D {
        let d = self.det();
        let l = &self.linear;
        let inv = [[l[1][1] / d, -l[0][1] / d], [-l[1][0] / d, l[0][0] / d]];
        let t = [
            -(inv[0][0] * self.translation[0] + inv[0][1] * self.translation[1]),
            -(inv[1][0] * self.translation[0] + inv[1][1] * self.translation[1]),
        ];
        Affine2D {
            linear: inv,
            translation: t,
        }
    }
}

/// Row-major 2D grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(DmdError::ShapeMismatch(format!(
                "{} values for a {width}x{height} raster",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Raster<f64> {
    /// Bilinear interpolation at `(x, y)`, where pixel `(i, j)` sits at integer
    /// coordinates. Points outside `[0, w-1] x [0, h-1]` read `background`.
    pub fn sample_bilinear(&self, x: f64, y: f64, background: f64) -> f64 {
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 || !(x >= 0.0 && y >= 0.0) {
            return background;
        }
        let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
        if x > xmax || y > ymax {
            return background;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let v00 = self.data[y0 * w + x0];
        let v10 = self.data[y0 * w + x1];
        let v01 = self.data[y1 * w + x0];
        let v11 = self.data[y1 * w + x1];
        let top = v00 + fx * (v10 - v00);
        let bottom = v01 + fx * (v11 - v01);
        top + fy * (bottom - top)
    }

    /// Nearest-pixel lookup, `background` outside.
    pub fn sample_nearest(&self, x: f64, y: f64, background: f64) -> f64 {
        let xi = x.round();
        let yi = y.round();
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return background;
        }
        self.data[yi as usize * self.width + xi as usize]
    }
}

/// Grayscale raster with intensities in `[0, 1]`; ridges are dark.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pixels: Raster<f64>,
    ppi: u32,
}

pub const DEFAULT_PPI: u32 = 500;

impl GrayImage {
    pub fn new(pixels: Raster<f64>, ppi: u32) -> Result<Self> {
        if pixels.width() == 0 || pixels.height() == 0 || ppi == 0 {
            return Err(DmdError::InvalidArgument("empty image or zero ppi".into()));
        }
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DmdError::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels, ppi })
    }

    /// Builds an image, clamping values into `[0, 1]`.
    pub fn from_raster_clamped(pixels: Raster<f64>) -> Self {
        let pixels = pixels.map(|v| if v.is_nan() { 1.0 } else { v.clamp(0.0, 1.0) });
        Self {
            pixels,
            ppi: DEFAULT_PPI,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_raster_clamped(Raster::filled(width, height, value))
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn ppi(&self) -> u32 {
        self.ppi
    }

    pub fn raster(&self) -> &Raster<f64> {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        *self.pixels.get(x, y)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width() - 1) as f64 && y <= (self.height() - 1) as f64
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let (w, h) = (self.width() as u32, self.height() as u32);
        image::GrayImage::from_fn(w, h, |x, y| {
            image::Luma([(self.get(x as usize, y as usize) * 255.0).round() as u8])
        })
    }

    /// Reads any image file, converting to 8-bit grayscale.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(Self::from_luma8(&image::open(path)?.to_luma8()))
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        Ok(self.to_luma8().save_with_format(path, image::ImageFormat::Png)?)
    }

    pub fn from_luma8(img: &image::GrayImage) -> Self {
        let r = Raster::from_fn(img.width() as usize, img.height() as usize, |x, y| {
            img.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
        });
        Self::from_raster_clamped(r)
    }
}

/// Foreground mask with values in `[0, 1]` (soft) or `{0, 1}` (hard).
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    values: Raster<f64>,
}

impl SegMask {
    pub fn new(values: Raster<f64>) -> Result<Self> {
        if let Some(v) = values.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DmdError::InvalidArgument(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self { values })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            values: Raster::filled(width, height, value.clamp(0.0, 1.0)),
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            values: Raster::from_fn(width, height, |x, y| if f(x, y) { 1.0 } else { 0.0 }),
        }
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn raster(&self) -> &Raster<f64> {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        *self.values.get(x, y)
    }

    pub fn is_hard(&self) -> bool {
        self.values.data().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Hard view: true where the value is at least 0.5.
    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.get(x, y) >= 0.5
    }

    /// Foreground test at a continuous position (nearest pixel); false outside.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.values.sample_nearest(x, y, 0.0) >= 0.5
    }

    pub fn count_set(&self) -> usize {
        self.values.data().iter().filter(|&&v| v >= 0.5).count()
    }

    pub fn intersect(&self, other: &SegMask) -> Result<SegMask> {
        if !self.values.same_shape(&other.values) {
            return Err(DmdError::ShapeMismatch("mask intersection".into()));
        }
        let data = self
            .values
            .data()
            .iter()
            .zip(other.values.data())
            .map(|(a, b)| a.min(*b))
            .collect();
        Ok(SegMask {
            values: Raster::from_vec(self.width(), self.height(), data)?,
        })
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            image::Luma([(self.get(x as usize, y as usize) * 255.0).round() as u8])
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(Self::from_luma8(&image::open(path)?.to_luma8()))
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        Ok(self.to_luma8().save_with_format(path, image::ImageFormat::Png)?)
    }

    pub fn from_luma8(img: &image::GrayImage) -> Self {
        Self {
            values: Raster::from_fn(img.width() as usize, img.height() as usize, |x, y| {
                img.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn angle_diff_examples() {
        assert_eq!(angle_diff(0.0, 0.0), 0.0);
        assert!((angle_diff(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert!((angle_diff(PI / 2.0, PI) + PI / 2.0).abs() < 1e-12);
        assert_eq!(angle_diff(PI, 0.0), PI);
    }

    #[test]
    fn transform_examples() {
        let m = Minutia::new(5.0, 5.0, 0.0);
        assert_eq!(m.transformed(&Affine2D::identity()), m);
        let t = m.transformed(&Affine2D::translation(10.0, 0.0));
        assert_eq!((t.x(), t.y(), t.theta()), (15.0, 5.0, 0.0));

        let r = Minutia::new(1.0, 0.0, 0.0).transformed(&Affine2D::rotation(PI / 2.0));
        assert!(r.x().abs() < 1e-12);
        assert!((r.y() - 1.0).abs() < 1e-12);
        assert!((r.theta() - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_transform_rejected() {
        assert!(matches!(
            Affine2D::new([[1.0, 2.0], [2.0, 4.0]], [0.0, 0.0]),
            Err(DmdError::SingularTransform(_))
        ));
    }

    #[test]
    fn normalize_tiny_negative() {
        let a = normalize_angle(-1e-18);
        assert!((0.0..TAU).contains(&a));
    }

    #[test]
    fn duplicates_rejected() {
        let a = Minutia::new(10.0, 10.0, 1.0);
        let b = Minutia::new(10.5, 10.0, 1.02);
        assert!(MinutiaSet::new(vec![a, b], "x").is_err());
        let c = Minutia::new(10.5, 10.0, 1.2);
        assert_eq!(MinutiaSet::new(vec![a, c], "x").unwrap().len(), 2);
        assert_eq!(MinutiaSet::dedup(vec![a, b, c], "x").len(), 2);
    }

    #[test]
    fn text_format_roundtrip() {
        let text = "# comment\n10 20 90\n  30.5 40.25 359 # trailing\n\n";
        let set = MinutiaSet::parse_text(text, "f").unwrap();
        assert_eq!(set.len(), 2);
        assert!((set.get(0).unwrap().theta() - PI / 2.0).abs() < 1e-12);
        let again = MinutiaSet::parse_text(&set.to_text(), "f").unwrap();
        for (a, b) in set.iter().zip(again.iter()) {
            assert!(a.distance(b) < 1e-3);
            assert!(angle_diff(a.theta(), b.theta()).abs() < 1e-4);
        }
        assert!(matches!(
            MinutiaSet::parse_text("1 2\n", "f"),
            Err(DmdError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn bilinear_border_and_interior() {
        let r = Raster::from_fn(3, 3, |x, y| (x + 3 * y) as f64 / 8.0);
        assert_eq!(r.sample_bilinear(1.0, 1.0, 9.0), 0.5);
        assert!((r.sample_bilinear(0.5, 0.0, 9.0) - 0.0625).abs() < 1e-15);
        assert_eq!(r.sample_bilinear(2.0, 2.0, 9.0), 1.0);
        assert_eq!(r.sample_bilinear(-0.01, 1.0, 9.0), 9.0);
        assert_eq!(r.sample_bilinear(2.01, 1.0, 9.0), 9.0);
    }

    fn affine_strategy() -> impl Strategy<Value = Affine2D> {
        (0.5f64..2.0, -PI..PI, -50.0f64..50.0, -50.0f64..50.0, -0.3f64..0.3).prop_map(|(s, a, tx, ty, shear)| {
            let sim = Affine2D::similarity(s, a, tx, ty);
            let sh = Affine2D::new([[1.0, shear], [0.0, 1.0]], [0.0, 0.0]).unwrap();
            sim.then_after(&sh)
        })
    }

    proptest! {
        #[test]
        fn angle_diff_antisymmetric(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let d = angle_diff(a, b);
            prop_assert!(d.abs() <= PI + 1e-12);
            let e = angle_diff(b, a);
            if (d.abs() - PI).abs() > 1e-9 {
                prop_assert!((d + e).abs() < 1e-9);
            }
        }

        #[test]
        fn normalize_idempotent(a in -100.0f64..100.0) {
            let n = normalize_angle(a);
            prop_assert!((0.0..TAU).contains(&n));
            prop_assert_eq!(normalize_angle(n), n);
        }

        #[test]
        fn composition_matches_sequential(t1 in affine_strategy(), t2 in affine_strategy(),
                                          x in -100.0f64..100.0, y in -100.0f64..100.0,
                                          th in 0.0f64..6.28) {
            let m = Minutia::new(x, y, th);
            let once = m.transformed(&t2.then_after(&t1));
            let seq = m.transformed(&t1).transformed(&t2);
            prop_assert!(once.distance(&seq) < 1e-9);
        }

        #[test]
        fn inverse_roundtrip(t in affine_strategy(), x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let p = t.inverse().apply(t.apply([x, y]));
            prop_assert!((p[0] - x).abs() < 1e-9 && (p[1] - y).abs() < 1e-9);
        }
    }
}
