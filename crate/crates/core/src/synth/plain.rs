use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DmdError, Result};
use crate::model::{GrayImage, MinutiaSet, Raster, SegMask};

use super::generator::{Ellipse, SynthFingerprint, BACKGROUND};

/// Restricts a fingerprint to `crop`: the mask becomes the intersection,
/// the image is blanked outside it and minutiae outside it are dropped.
pub fn simulate_plain(fp: &SynthFingerprint, crop: &SegMask) -> Result<SynthFingerprint> {
    let mask = fp.mask.intersect(crop)?;
    let img = fp.image.raster();
    let image = Raster::from_fn(fp.width(), fp.height(), |x, y| {
        if mask.is_set(x, y) {
            *img.get(x, y)
        } else {
            BACKGROUND
        }
    });
    let minutiae = fp
        .minutiae
        .iter()
        .copied()
        .filter(|m| mask.contains_point(m.x(), m.y()));
    Ok(SynthFingerprint {
        image: GrayImage::from_raster_clamped(image),
        minutiae: MinutiaSet::dedup(minutiae, fp.minutiae.source_id()),
        orientation: fp.orientation.clone(),
        period: fp.period.clone(),
        mask,
    })
}

fn mask_centroid(mask: &SegMask) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.is_set(x, y) {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

/// Random elliptical crop keeping about `fraction` of the fingerprint's
/// foreground. The ellipse is centred near the foreground centroid and its
/// scale found by bisection on the retained area.
pub fn elliptical_crop(fp: &SynthFingerprint, fraction: f64, seed: u64) -> Result<SegMask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DmdError::InvalidArgument(format!(
            "crop fraction {fraction} outside (0, 1]"
        )));
    }
    let (w, h) = (fp.width(), fp.height());
    let full = || SegMask::filled(w, h, 1.0);
    let Some(c) = mask_centroid(&fp.mask) else {
        return Ok(full());
    };
    if fraction == 1.0 {
        return Ok(full());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = fp.mask.count_set() as f64;
    let r0 = (total / std::f64::consts::PI).sqrt();
    let shift = 0.25 * r0 * (1.0 - fraction);
    let aspect: f64 = rng.gen_range(0.8..1.25);
    let base = Ellipse {
        cx: c[0] + rng.gen_range(-shift..=shift),
        cy: c[1] + rng.gen_range(-shift..=shift),
        a: aspect.sqrt(),
        b: 1.0 / aspect.sqrt(),
        angle: rng.gen_range(0.0..std::f64::consts::PI),
    };
    let build = |scale: f64| {
        let e = Ellipse {
            a: base.a * scale,
            b: base.b * scale,
            ..base
        };
        SegMask::from_fn(w, h, |x, y| e.contains([x as f64, y as f64]))
    };
    let kept = |crop: &SegMask| {
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| fp.mask.is_set(x, y) && crop.is_set(x, y))
            .count() as f64
            / total
    };
    let (mut lo, mut hi) = (0.0, (w + h) as f64);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if kept(&build(mid)) < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(build(hi))
}
