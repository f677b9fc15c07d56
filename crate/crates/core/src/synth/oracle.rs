//! Handcrafted stand-in for the learned descriptor network: texture and
//! minutia features computed from a patch and its ground truth.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{assemble_dmd, DenseDescriptor, Template, CELLS, GRID};
use crate::error::{DmdError, Result};
use crate::geometry::{align_to_minutia, patch_frame, Patch};
use crate::model::{angle_diff, GrayImage, Minutia, Raster, SegMask};

use super::generator::{axial, SynthFingerprint, NOMINAL_PERIOD};

pub const ORACLE_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub patch_size: usize,
    /// Gaussian radius of the minutia density features, in pixels.
    pub density_sigma: f64,
    /// Decay length of the nearest-minutia feature, in pixels.
    pub distance_scale: f64,
    /// Lower bound on the per-channel spread used by z-normalization.
    pub std_floor: f64,
    /// Weight of the minutia branch relative to the texture branch.
    pub minutia_gain: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            patch_size: 128,
            density_sigma: 12.0,
            distance_scale: 20.0,
            std_floor: 0.05,
            minutia_gain: 2.0,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if self.patch_size < GRID || self.patch_size % GRID != 0 {
            return Err(DmdError::InvalidArgument(format!(
                "patch size must be a positive multiple of {GRID}"
            )));
        }
        if !(self.density_sigma > 0.0 && self.distance_scale > 0.0 && self.std_floor > 0.0) {
            return Err(DmdError::InvalidArgument("oracle scales must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth resampled into a patch frame. Orientations are relative to
/// the anchor direction; minutiae exclude the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTruth {
    pub orientation: Raster<f64>,
    pub period: Raster<f64>,
    pub mask: Raster<f64>,
    pub minutiae: Vec<Minutia>,
}

/// Minutiae this far outside the patch still influence border cells.
const MINUTIA_MARGIN: f64 = 24.0;

impl PatchTruth {
    pub fn from_fingerprint(fp: &SynthFingerprint, anchor: &Minutia, size: usize) -> Self {
        Self::from_fields(
            &fp.orientation,
            Some(&fp.period),
            &fp.mask,
            fp.minutiae.as_slice(),
            anchor,
            size,
        )
    }

    /// Truth for a raw image: orientation from the image structure tensor,
    /// nominal period.
    pub fn estimate(image: &GrayImage, mask: &SegMask, minutiae: &[Minutia], anchor: &Minutia, size: usize) -> Self {
        let orientation = structure_tensor_orientation(image.raster(), 4);
        Self::from_fields(&orientation, None, mask, minutiae, anchor, size)
    }

    fn from_fields(
        orientation: &Raster<f64>,
        period: Option<&Raster<f64>>,
        mask: &SegMask,
        minutiae: &[Minutia],
        anchor: &Minutia,
        size: usize,
    ) -> Self {
        let frame = patch_frame(anchor, size);
        let (w, h) = (orientation.width() as f64, orientation.height() as f64);
        let mut o = Raster::filled(size, size, 0.0);
        let mut p = Raster::filled(size, size, NOMINAL_PERIOD);
        let mut m = Raster::filled(size, size, 0.0);
        for v in 0..size {
            for u in 0..size {
                let [x, y] = frame.apply([u as f64, v as f64]);
                let (xi, yi) = (x.round(), y.round());
                if xi < 0.0 || yi < 0.0 || xi >= w || yi >= h {
                    continue;
                }
                let (xi, yi) = (xi as usize, yi as usize);
                o.set(u, v, axial(orientation.get(xi, yi) - anchor.theta()));
                if let Some(per) = period {
                    p.set(u, v, *per.get(xi, yi));
                }
                m.set(u, v, mask.get(xi, yi));
            }
        }
        let inv = frame.inverse();
        let lim = (-MINUTIA_MARGIN, size as f64 + MINUTIA_MARGIN);
        let kept = minutiae
            .iter()
            .filter(|q| !(q.distance(anchor) < 0.5 && angle_diff(q.theta(), anchor.theta()).abs() < 1e-3))
            .map(|q| q.transformed(&inv))
            .filter(|q| q.x() > lim.0 && q.x() < lim.1 && q.y() > lim.0 && q.y() < lim.1)
            .collect();
        Self {
            orientation: o,
            period: p,
            mask: m,
            minutiae: kept,
        }
    }
}

/// Raw oracle output, each tensor flattened channel, row, column.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFeatures {
    pub f_t: Vec<f64>,
    pub f_m: Vec<f64>,
    pub h: Vec<f64>,
}

/// Per-pixel ridge orientation in `[0, π)` from a box-smoothed
/// structure tensor of radius `r`.
pub fn structure_tensor_orientation(img: &Raster<f64>, r: usize) -> Raster<f64> {
    let (w, h) = (img.width(), img.height());
    let (gxx, gyy, gxy) = tensor_fields(img);
    let boxed = |f: &Raster<f64>| box_sum(f, r);
    let (sxx, syy, sxy) = (boxed(&gxx), boxed(&gyy), boxed(&gxy));
    Raster::from_fn(w, h, |x, y| {
        let (a, b, c) = (*sxx.get(x, y), *syy.get(x, y), *sxy.get(x, y));
        // gradient direction is normal to the ridges
        axial(0.5 * (2.0 * c).atan2(a - b) + PI / 2.0)
    })
}

fn tensor_fields(img: &Raster<f64>) -> (Raster<f64>, Raster<f64>, Raster<f64>) {
    let (w, h) = (img.width(), img.height());
    let at = |x: isize, y: isize| *img.get(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize);
    let mut gxx = Raster::filled(w, h, 0.0);
    let mut gyy = Raster::filled(w, h, 0.0);
    let mut gxy = Raster::filled(w, h, 0.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            let (xu, yu) = (x as usize, y as usize);
            gxx.set(xu, yu, gx * gx);
            gyy.set(xu, yu, gy * gy);
            gxy.set(xu, yu, gx * gy);
        }
    }
    (gxx, gyy, gxy)
}

fn box_sum(f: &Raster<f64>, r: usize) -> Raster<f64> {
    let (w, h) = (f.width(), f.height());
    let mut integral = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            integral[(y + 1) * (w + 1) + x + 1] =
                f.get(x, y) + integral[y * (w + 1) + x + 1] + integral[(y + 1) * (w + 1) + x]
                    - integral[y * (w + 1) + x];
        }
    }
    Raster::from_fn(w, h, |x, y| {
        let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
        let (x1, y1) = ((x + r + 1).min(w), (y + r + 1).min(h));
        integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
            + integral[y0 * (w + 1) + x0]
    })
}

/// Mean expected minutia density for one minutia per 1600 px².
fn reference_density(sigma: f64) -> f64 {
    2.0 * PI * sigma * sigma / 1600.0
}

/// Computes `(f_t, f_m, h)` for `patch` from its ground truth.
pub fn oracle_extract(patch: &Patch, truth: &PatchTruth, cfg: &OracleConfig) -> Result<OracleFeatures> {
    cfg.validate()?;
    let size = patch.size();
    if patch.image.height() != size {
        return Err(DmdError::ShapeMismatch("patch must be square".into()));
    }
    let fields = [
        (&truth.orientation, "orientation field does not cover the patch"),
        (&truth.period, "period field does not cover the patch"),
        (&truth.mask, "mask does not cover the patch"),
    ];
    for (r, what) in fields {
        if r.width() != size || r.height() != size {
            return Err(DmdError::MissingTruth(what));
        }
    }
    let cell = size / GRID;
    let img = patch.image.raster();
    let (gxx, gyy, gxy) = tensor_fields(img);
    let c = ORACLE_CHANNELS;
    let mut f_t = vec![0.0; c * CELLS];
    let mut f_m = vec![0.0; c * CELLS];
    let mut h = vec![0.0; CELLS];

    for r in 0..GRID {
        for col in 0..GRID {
            let k = r * GRID + col;
            let (mut n, mut msum) = (0.0, 0.0);
            let (mut c2, mut s2, mut freq) = (0.0, 0.0, 0.0);
            let (mut i1, mut i2) = (0.0, 0.0);
            let (mut txx, mut tyy, mut txy) = (0.0, 0.0, 0.0);
            for v in r * cell..(r + 1) * cell {
                for u in col * cell..(col + 1) * cell {
                    let m = *truth.mask.get(u, v);
                    msum += m;
                    if m < 0.5 {
                        continue;
                    }
                    n += 1.0;
                    let o = 2.0 * truth.orientation.get(u, v);
                    c2 += o.cos();
                    s2 += o.sin();
                    freq += NOMINAL_PERIOD / truth.period.get(u, v);
                    let p = *img.get(u, v);
                    i1 += p;
                    i2 += p * p;
                    txx += gxx.get(u, v);
                    tyy += gyy.get(u, v);
                    txy += gxy.get(u, v);
                }
            }
            h[k] = msum / (cell * cell) as f64;
            if n == 0.0 {
                continue;
            }
            let (c2, s2) = (c2 / n, s2 / n);
            let mean = i1 / n;
            let energy = txx + tyy;
            let coherence = if energy > 1e-12 {
                ((txx - tyy).powi(2) + 4.0 * txy * txy).sqrt() / energy
            } else {
                0.0
            };
            let feats = [
                c2,
                s2,
                freq / n - 1.0,
                (i2 / n - mean * mean).max(0.0).sqrt(),
                coherence,
                1.0 - c2.hypot(s2),
            ];
            for (ch, f) in feats.into_iter().enumerate() {
                f_t[ch * CELLS + k] = f;
            }
        }
    }
    z_normalize(&mut f_t, &h, cfg.std_floor);

    let half = cell as f64 / 2.0;
    let inv2s2 = 1.0 / (2.0 * cfg.density_sigma * cfg.density_sigma);
    let base = reference_density(cfg.density_sigma);
    for r in 0..GRID {
        for col in 0..GRID {
            let k = r * GRID + col;
            if h[k] == 0.0 {
                continue;
            }
            let (x, y) = (col as f64 * cell as f64 + half, r as f64 * cell as f64 + half);
            let mut acc = [0.0; 5];
            let mut nearest = f64::INFINITY;
            for m in &truth.minutiae {
                let d2 = (m.x() - x).powi(2) + (m.y() - y).powi(2);
                nearest = nearest.min(d2.sqrt());
                let w = (-d2 * inv2s2).exp();
                let t = m.theta();
                acc[0] += w;
                acc[1] += w * t.cos();
                acc[2] += w * t.sin();
                acc[3] += w * (2.0 * t).cos();
                acc[4] += w * (2.0 * t).sin();
            }
            let feats = [
                acc[0] - base,
                acc[1],
                acc[2],
                (-nearest / cfg.distance_scale).exp() - 0.5,
                acc[3],
                acc[4],
            ];
            for (ch, f) in feats.into_iter().enumerate() {
                f_m[ch * CELLS + k] = cfg.minutia_gain * f;
            }
        }
    }
    Ok(OracleFeatures { f_t, f_m, h })
}

/// Mask-weighted per-channel standardization.
fn z_normalize(f: &mut [f64], h: &[f64], floor: f64) {
    let total: f64 = h.iter().sum();
    if total <= 0.0 {
        f.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for ch in f.chunks_mut(CELLS) {
        let mean = ch.iter().zip(h).map(|(v, w)| v * w).sum::<f64>() / total;
        let var = ch.iter().zip(h).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
        let sd = var.sqrt().max(floor);
        ch.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
}

/// Oracle descriptor anchored at `anchor`.
pub fn extract_descriptor(fp: &SynthFingerprint, anchor: &Minutia, cfg: &OracleConfig) -> Result<DenseDescriptor> {
    let patch = align_to_minutia(&fp.image, anchor, cfg.patch_size)?;
    let truth = PatchTruth::from_fingerprint(fp, anchor, cfg.patch_size);
    let f = oracle_extract(&patch, &truth, cfg)?;
    assemble_dmd(&f.f_t, &f.f_m, &f.h, *anchor)
}

/// One descriptor per ground-truth minutia, in minutia order.
pub fn extract_template(fp: &SynthFingerprint, cfg: &OracleConfig) -> Result<Template> {
    let ds = fp
        .minutiae
        .as_slice()
        .par_iter()
        .map(|m| extract_descriptor(fp, m, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(Template::Float(ds))
}

/// Template for an external image with known minutiae; orientation comes from
/// the image itself and the period is taken as nominal.
pub fn extract_template_from_image(
    image: &GrayImage,
    mask: &SegMask,
    minutiae: &[Minutia],
    cfg: &OracleConfig,
) -> Result<Template> {
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(DmdError::ShapeMismatch("mask and image sizes differ".into()));
    }
    let orientation = structure_tensor_orientation(image.raster(), 4);
    let ds = minutiae
        .par_iter()
        .map(|m| {
            let patch = align_to_minutia(image, m, cfg.patch_size)?;
            let truth = PatchTruth::from_fields(&orientation, None, mask, minutiae, m, cfg.patch_size);
            let f = oracle_extract(&patch, &truth, cfg)?;
            assemble_dmd(&f.f_t, &f.f_m, &f.h, *m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Template::Float(ds))
}
