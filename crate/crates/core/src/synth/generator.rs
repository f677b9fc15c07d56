use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::geometry::erode_mask;
use crate::model::{Affine2D, GrayImage, Minutia, MinutiaSet, Raster, SegMask};

/// Intensity of non-fingerprint pixels.
pub const BACKGROUND: f64 = 1.0;
pub const MIN_SIZE: usize = 128;
/// Reference ridge period used to normalize frequency features.
pub const NOMINAL_PERIOD: f64 = 9.0;

/// Wraps an undirected angle into `[0, π)`.
pub fn axial(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// A fingerprint impression with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFingerprint {
    pub image: GrayImage,
    pub minutiae: MinutiaSet,
    /// Ridge direction per pixel, in `[0, π)`.
    pub orientation: Raster<f64>,
    /// Ridge period per pixel, in pixels.
    pub period: Raster<f64>,
    pub mask: SegMask,
}

impl SynthFingerprint {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Fraction of the canvas covered by the mask.
    pub fn coverage(&self) -> f64 {
        self.mask.count_set() as f64 / (self.width() * self.height()) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    pub k: [f64; 2],
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spiral {
    pub x: f64,
    pub y: f64,
    /// +1 or −1: which side of the fork gains a ridge.
    pub sign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (p[0] - self.cx, p[1] - self.cy);
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Analytic ridge model. The ridge phase is a smooth distance-like field
/// scaled to the ridge period plus one spiral term per minutia; every
/// spiral point is a ridge ending or bifurcation of `0.5 + 0.45·cos φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerModel {
    pub size: usize,
    pub center: [f64; 2],
    pub axis_angle: f64,
    pub stretch: [f64; 2],
    pub waves: Vec<Wave>,
    pub period: f64,
    pub spirals: Vec<Spiral>,
    pub mask: Ellipse,
}

impl FingerModel {
    /// Draws a random finger for a `size × size` canvas.
    pub fn random(seed: u64, size: usize) -> Result<Self> {
        if size < MIN_SIZE {
            return Err(DmdError::InvalidArgument(format!(
                "canvas size must be at least {MIN_SIZE}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = size as f64;
        let period = rng.gen_range(8.5..9.5);
        let mask = Ellipse {
            cx: s / 2.0 + rng.gen_range(-0.04..0.04) * s,
            cy: s / 2.0 + rng.gen_range(-0.04..0.04) * s,
            a: rng.gen_range(0.36..0.44) * s,
            b: rng.gen_range(0.40..0.48) * s,
            angle: rng.gen_range(-0.2..0.2),
        };
        // whorl-like (singular point inside) or arch-like (center far away)
        let center = if rng.gen_bool(0.5) {
            [
                mask.cx + rng.gen_range(-0.15..0.15) * s,
                mask.cy + rng.gen_range(-0.15..0.15) * s,
            ]
        } else {
            let r = rng.gen_range(1.2..2.5) * s;
            let a = rng.gen_range(0.0..TAU);
            [s / 2.0 + r * a.cos(), s / 2.0 + r * a.sin()]
        };
        let axis_angle = rng.gen_range(0.0..PI);
        let stretch = [rng.gen_range(0.85..1.0), rng.gen_range(0.85..1.0)];
        let waves = (0..3)
            .map(|_| {
                let len = TAU / rng.gen_range(120.0..300.0);
                let dir = rng.gen_range(0.0..TAU);
                Wave {
                    amplitude: rng.gen_range(0.3..1.0) * 0.12 / len,
                    k: [len * dir.cos(), len * dir.sin()],
                    phase: rng.gen_range(0.0..TAU),
                }
            })
            .collect();
        let mut model = FingerModel {
            size,
            center,
            axis_angle,
            stretch,
            waves,
            period,
            spirals: Vec::new(),
            mask,
        };

        // minutiae: well inside the mask, spaced apart, away from the core
        let canvas = SegMask::from_fn(size, size, |x, y| mask.contains([x as f64, y as f64]));
        let inner = erode_mask(&canvas, 12);
        let target = (canvas.count_set() as f64 / 1600.0).round() as usize;
        let core_inside = (0.0..s).contains(&center[0]) && (0.0..s).contains(&center[1]);
        let mut spirals: Vec<Spiral> = Vec::new();
        for _ in 0..4000 {
            if spirals.len() >= target {
                break;
            }
            let p = [rng.gen_range(0.0..s - 1.0), rng.gen_range(0.0..s - 1.0)];
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            if !inner.contains_point(p[0], p[1]) {
                continue;
            }
            if core_inside && (p[0] - center[0]).hypot(p[1] - center[1]) < 20.0 {
                continue;
            }
            if spirals.iter().any(|q| (q.x - p[0]).hypot(q.y - p[1]) < 20.0) {
                continue;
            }
            spirals.push(Spiral { x: p[0], y: p[1], sign });
        }
        model.spirals = spirals;
        Ok(model)
    }

    /// Smooth distance-like field and its gradient.
    fn base(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (s, c) = self.axis_angle.sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let u = (c * dx + s * dy) / self.stretch[0];
        let v = (-s * dx + c * dy) / self.stretch[1];
        let r = u.hypot(v).max(1e-9);
        // d r / d(u, v) = (u, v) / r, then chain through the rotation and stretch
        let gu = u / r / self.stretch[0];
        let gv = v / r / self.stretch[1];
        let mut g = [c * gu - s * gv, s * gu + c * gv];
        let mut val = r;
        for w in &self.waves {
            let arg = w.k[0] * p[0] + w.k[1] * p[1] + w.phase;
            val += w.amplitude * arg.sin();
            g[0] += w.amplitude * arg.cos() * w.k[0];
            g[1] += w.amplitude * arg.cos() * w.k[1];
        }
        (val, g)
    }

    /// Full ridge phase at a model-space point.
    pub fn phase(&self, p: [f64; 2]) -> f64 {
        let (g, _) = self.base(p);
        let mut phi = TAU / self.period * g;
        for sp in &self.spirals {
            phi += sp.sign * (p[1] - sp.y).atan2(p[0] - sp.x);
        }
        phi
    }

    /// Ridge direction of the smooth field, in `[0, π)`.
    pub fn orientation(&self, p: [f64; 2]) -> f64 {
        let (_, g) = self.base(p);
        axial(g[1].atan2(g[0]) + PI / 2.0)
    }

    pub fn local_period(&self, p: [f64; 2]) -> f64 {
        let (_, g) = self.base(p);
        self.period / g[0].hypot(g[1]).max(1e-6)
    }

    /// Minutiae in model coordinates.
    pub fn minutiae(&self) -> Vec<Minutia> {
        self.spirals
            .iter()
            .map(|sp| {
                let (_, g) = self.base([sp.x, sp.y]);
                // along the ridge, the side picked by the spiral sign
                let t = [-g[1] * sp.sign, g[0] * sp.sign];
                Minutia::new(sp.x, sp.y, t[1].atan2(t[0]))
            })
            .collect()
    }

    /// Renders the finger onto a `size × size` canvas after applying `pose`
    /// (model coordinates to image coordinates). The rendering is analytic,
    /// so a rigid pose involves no resampling.
    pub fn render(&self, size: usize, pose: &Affine2D) -> SynthFingerprint {
        let inv = pose.inverse();
        let rot = pose.rotation_angle();
        let mut image = Raster::filled(size, size, BACKGROUND);
        let mut orientation = Raster::filled(size, size, 0.0);
        let mut period = Raster::filled(size, size, NOMINAL_PERIOD);
        let mut mask = Raster::filled(size, size, 0.0);
        for y in 0..size {
            for x in 0..size {
                let p = inv.apply([x as f64, y as f64]);
                orientation.set(x, y, axial(self.orientation(p) + rot));
                period.set(x, y, self.local_period(p));
                if self.mask.contains(p) {
                    mask.set(x, y, 1.0);
                    image.set(x, y, 0.5 + 0.45 * self.phase(p).cos());
                }
            }
        }
        let mask = SegMask::new(mask).expect("binary mask");
        let kept = self
            .minutiae()
            .into_iter()
            .map(|m| m.transformed(pose))
            .filter(|m| mask.contains_point(m.x(), m.y()));
        SynthFingerprint {
            image: GrayImage::from_raster_clamped(image),
            minutiae: MinutiaSet::dedup(kept, "synth"),
            orientation,
            period,
            mask,
        }
    }
}

/// Random synthetic fingerprint on a `size × size` canvas; deterministic per seed.
pub fn synth_fingerprint(seed: u64, size: usize) -> Result<SynthFingerprint> {
    Ok(FingerModel::random(seed, size)?.render(size, &Affine2D::identity()))
}
