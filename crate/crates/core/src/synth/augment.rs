use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::geometry::{Patch, BACKGROUND};
use crate::model::{GrayImage, Raster};

use super::distort::{DistortionConfig, DistortionField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub noise_sigma: f64,
    pub gamma_range: [f64; 2],
    /// Magnitude of the small elastic warp, in pixels.
    pub distortion: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_translation: 10.0,
            max_rotation_deg: 5.0,
            noise_sigma: 0.05,
            gamma_range: [0.7, 1.4],
            distortion: 2.0,
        }
    }
}

impl AugmentConfig {
    /// Every transformation disabled.
    pub fn identity() -> Self {
        Self {
            max_translation: 0.0,
            max_rotation_deg: 0.0,
            noise_sigma: 0.0,
            gamma_range: [1.0, 1.0],
            distortion: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let [g0, g1] = self.gamma_range;
        let ok = self.max_translation >= 0.0
            && self.max_rotation_deg >= 0.0
            && self.noise_sigma >= 0.0
            && self.distortion >= 0.0
            && g0 > 0.0
            && g0 <= g1;
        if ok {
            Ok(())
        } else {
            Err(DmdError::InvalidArgument(
                "augmentation ranges must be non-negative and ordered".into(),
            ))
        }
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub translation: [f64; 2],
    pub rotation: f64,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub distortion: f64,
    pub seed: u64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 2],
            rotation: 0.0,
            gamma: 1.0,
            noise_sigma: 0.0,
            distortion: 0.0,
            seed: 0,
        }
    }

    pub fn sample(cfg: &AugmentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let translation = [uniform(cfg.max_translation), uniform(cfg.max_translation)];
        let rotation = uniform(cfg.max_rotation_deg).to_radians();
        let [g0, g1] = cfg.gamma_range;
        let gamma = if g1 > g0 { rng.gen_range(g0..=g1) } else { g0 };
        Ok(Self {
            translation,
            rotation,
            gamma,
            noise_sigma: cfg.noise_sigma,
            distortion: cfg.distortion,
            seed: rng.gen(),
        })
    }
}

/// Applies the geometric, photometric and noise transforms of `p`.
///
/// Output pixel `q` reads the input at `R(−rotation)(q − c − t) + c`, with
/// `c` the patch center and `t` the translation, after the elastic warp.
pub fn augment_with(patch: &Patch, p: &AugmentParams) -> Result<Patch> {
    let (w, h) = (patch.image.width(), patch.image.height());
    let field = if p.distortion > 0.0 {
        let cfg = DistortionConfig {
            magnitude: p.distortion,
            grid: 4,
            seed: p.seed,
        };
        Some(DistortionField::new(w, h, &cfg)?)
    } else {
        None
    };
    let c = [(w / 2) as f64, (h / 2) as f64];
    let (s, co) = p.rotation.sin_cos();
    let src = patch.image.raster();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, p.noise_sigma).map_err(|e| DmdError::InvalidArgument(e.to_string()))?;
    let geometric = p.rotation != 0.0 || p.translation != [0.0; 2];
    let mut out = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let mut q = [u as f64, v as f64];
            if let Some(f) = &field {
                q = f.backward(q);
            }
            let mut val = if geometric {
                let d = [q[0] - c[0] - p.translation[0], q[1] - c[1] - p.translation[1]];
                let x = co * d[0] + s * d[1] + c[0];
                let y = -s * d[0] + co * d[1] + c[1];
                src.sample_bilinear(x, y, BACKGROUND)
            } else {
                src.sample_bilinear(q[0], q[1], BACKGROUND)
            };
            if p.gamma != 1.0 {
                val = val.max(0.0).powf(p.gamma);
            }
            if p.noise_sigma > 0.0 {
                val += noise.sample(&mut rng);
            }
            out.push(val);
        }
    }
    Ok(Patch {
        image: GrayImage::from_raster_clamped(Raster::from_vec(w, h, out)?),
        anchor: patch.anchor,
    })
}

/// Random augmentation; deterministic per seed.
pub fn augment(patch: &Patch, cfg: &AugmentConfig, seed: u64) -> Result<Patch> {
    augment_with(patch, &AugmentParams::sample(cfg, seed)?)
}
