use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::model::{GrayImage, Minutia, MinutiaSet, Raster, SegMask};

use super::generator::{axial, SynthFingerprint, BACKGROUND};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionConfig {
    /// Upper bound on the displacement of any point, in pixels.
    pub magnitude: f64,
    /// Control points per axis inside the canvas.
    pub grid: usize,
    pub seed: u64,
}

impl Default for DistortionConfig {
    fn default() -> Self {
        Self {
            magnitude: 8.0,
            grid: 4,
            seed: 0,
        }
    }
}

/// Smooth displacement field `u` over a `width × height` canvas: a cubic
/// B-spline over random control offsets, tapered by a sine window so it
/// vanishes on the canvas border. `|u| ≤ magnitude` everywhere.
///
/// The warp is backward: output pixel `q` reads the source at `q + u(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionField {
    width: usize,
    height: usize,
    grid: usize,
    /// `(grid + 2)²` control offsets, row-major, node `i` at `(i − 1)·spacing`.
    nodes: Vec<[f64; 2]>,
}

fn bspline(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ];
    let d = [
        -(1.0 - t).powi(2) / 2.0,
        (3.0 * t2 - 4.0 * t) / 2.0,
        (-3.0 * t2 + 2.0 * t + 1.0) / 2.0,
        t2 / 2.0,
    ];
    (w, d)
}

impl DistortionField {
    pub fn new(width: usize, height: usize, cfg: &DistortionConfig) -> Result<Self> {
        if !(cfg.magnitude >= 0.0 && cfg.magnitude.is_finite()) {
            return Err(DmdError::InvalidArgument(
                "distortion magnitude must be finite and ≥ 0".into(),
            ));
        }
        if cfg.grid < 2 || width < 2 || height < 2 {
            return Err(DmdError::InvalidArgument(
                "distortion grid and canvas need at least 2 points per axis".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = cfg.grid + 2;
        let nodes = (0..n * n)
            .map(|_| {
                let r = cfg.magnitude * rng.gen::<f64>().sqrt();
                let a = rng.gen_range(0.0..TAU);
                [r * a.cos(), r * a.sin()]
            })
            .collect();
        Ok(Self {
            width,
            height,
            grid: cfg.grid,
            nodes,
        })
    }

    fn spacing(&self) -> [f64; 2] {
        let g = (self.grid - 1) as f64;
        [(self.width - 1) as f64 / g, (self.height - 1) as f64 / g]
    }

    fn window(&self, p: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let ext = [(self.width - 1) as f64, (self.height - 1) as f64];
        let mut w = [0.0; 2];
        let mut dw = [0.0; 2];
        for a in 0..2 {
            if (0.0..=ext[a]).contains(&p[a]) {
                let k = PI / ext[a];
                w[a] = (k * p[a]).sin();
                dw[a] = k * (k * p[a]).cos();
            }
        }
        (w, dw)
    }

    /// Displacement and its Jacobian `∂u_i/∂x_j` at `p`.
    pub fn eval(&self, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let (w, dw) = self.window(p);
        if w[0] == 0.0 && dw[0] == 0.0 || w[1] == 0.0 && dw[1] == 0.0 {
            return ([0.0; 2], [[0.0; 2]; 2]);
        }
        let h = self.spacing();
        let n = self.grid + 2;
        let mut cell = [0usize; 2];
        let mut frac = [0.0; 2];
        for a in 0..2 {
            let t = p[a] / h[a];
            let k = (t.floor().max(0.0) as usize).min(self.grid - 2);
            cell[a] = k;
            frac[a] = t - k as f64;
        }
        let (bx, dbx) = bspline(frac[0]);
        let (by, dby) = bspline(frac[1]);
        let mut s = [0.0; 2];
        let mut sx = [0.0; 2];
        let mut sy = [0.0; 2];
        for (j, (wy, dy)) in by.iter().zip(&dby).enumerate() {
            for (i, (wx, dx)) in bx.iter().zip(&dbx).enumerate() {
                // control node index k + i maps to lattice position k + i − 1
                let node = self.nodes[(cell[1] + j) * n + cell[0] + i];
                for c in 0..2 {
                    s[c] += wx * wy * node[c];
                    sx[c] += dx / h[0] * wy * node[c];
                    sy[c] += wx * dy / h[1] * node[c];
                }
            }
        }
        let win = w[0] * w[1];
        let u = [win * s[0], win * s[1]];
        let mut jac = [[0.0; 2]; 2];
        for c in 0..2 {
            jac[c][0] = dw[0] * w[1] * s[c] + win * sx[c];
            jac[c][1] = w[0] * dw[1] * s[c] + win * sy[c];
        }
        (u, jac)
    }

    pub fn displacement(&self, p: [f64; 2]) -> [f64; 2] {
        self.eval(p).0
    }

    /// Source point read by output point `q`.
    pub fn backward(&self, q: [f64; 2]) -> [f64; 2] {
        let u = self.displacement(q);
        [q[0] + u[0], q[1] + u[1]]
    }

    /// Output point whose backward image is `p`, by fixed-point iteration.
    pub fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        let mut q = p;
        for _ in 0..100 {
            let u = self.displacement(q);
            let next = [p[0] - u[0], p[1] - u[1]];
            let done = (next[0] - q[0]).abs() + (next[1] - q[1]).abs() < 1e-10;
            q = next;
            if done {
                break;
            }
        }
        q
    }

    /// Maps a source direction at source point `backward(q)` to the output
    /// frame at `q`, through the inverse of the backward Jacobian.
    pub fn push_direction(&self, q: [f64; 2], angle: f64) -> f64 {
        let (_, j) = self.eval(q);
        let a = [[1.0 + j[0][0], j[0][1]], [j[1][0], 1.0 + j[1][1]]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let (s, c) = angle.sin_cos();
        let vx = (a[1][1] * c - a[0][1] * s) / det;
        let vy = (-a[1][0] * c + a[0][0] * s) / det;
        vy.atan2(vx)
    }

    /// Largest displacement norm over the canvas pixels.
    pub fn max_displacement(&self) -> f64 {
        let mut best: f64 = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let u = self.displacement([x as f64, y as f64]);
                best = best.max(u[0].hypot(u[1]));
            }
        }
        best
    }
}

/// Warps image, mask, orientation, period and minutiae through one random
/// smooth field.
pub fn apply_distortion(fp: &SynthFingerprint, cfg: &DistortionConfig) -> Result<SynthFingerprint> {
    let field = DistortionField::new(fp.width(), fp.height(), cfg)?;
    if cfg.magnitude == 0.0 {
        return Ok(fp.clone());
    }
    Ok(warp(fp, &field))
}

pub fn warp(fp: &SynthFingerprint, field: &DistortionField) -> SynthFingerprint {
    let (w, h) = (fp.width(), fp.height());
    let img = fp.image.raster();
    let mut image = Raster::filled(w, h, BACKGROUND);
    let mut mask = Raster::filled(w, h, 0.0);
    let mut orientation = fp.orientation.clone();
    let mut period = fp.period.clone();
    for y in 0..h {
        for x in 0..w {
            let q = [x as f64, y as f64];
            let s = field.backward(q);
            image.set(x, y, img.sample_bilinear(s[0], s[1], BACKGROUND));
            mask.set(x, y, fp.mask.raster().sample_nearest(s[0], s[1], 0.0));
            let (sx, sy) = (s[0].round(), s[1].round());
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                let o = *fp.orientation.get(sx as usize, sy as usize);
                orientation.set(x, y, axial(field.push_direction(q, o)));
                period.set(x, y, *fp.period.get(sx as usize, sy as usize));
            }
        }
    }
    let mask = SegMask::new(mask).expect("mask values stay in [0, 1]");
    let minutiae = fp.minutiae.iter().filter_map(|m| {
        let q = field.forward(m.position());
        let keep = mask.contains_point(q[0], q[1]);
        keep.then(|| Minutia::new(q[0], q[1], field.push_direction(q, m.theta())))
    });
    SynthFingerprint {
        image: GrayImage::from_raster_clamped(image),
        minutiae: MinutiaSet::dedup(minutiae, fp.minutiae.source_id()),
        orientation,
        period,
        mask,
    }
}
