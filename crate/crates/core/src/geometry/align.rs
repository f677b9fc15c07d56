use crate::error::{DmdError, Result};
use crate::model::{Affine2D, GrayImage, Minutia, Raster};

/// Fill value for patch regions falling outside the source image.
pub const BACKGROUND: f64 = 1.0;

pub const DEFAULT_PATCH_SIZE: usize = 128;

/// Square image crop centered on an anchor minutia whose direction points
/// along the patch `+x` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: GrayImage,
    pub anchor: Minutia,
}

impl Patch {
    pub fn size(&self) -> usize {
        self.image.width()
    }
}

/// Transform taking patch coordinates to source-image coordinates for a patch
/// of side `patch_size` anchored at `m`.
///
/// Patch pixel `(size/2, size/2)` maps onto the anchor position and the patch
/// `+x` axis onto the anchor direction.
pub fn patch_frame(m: &Minutia, patch_size: usize) -> Affine2D {
    let c = (patch_size / 2) as f64;
    let (s, co) = m.theta().sin_cos();
    // p = m + R(theta) * (q - c)
    let tx = m.x() - (co * c - s * c);
    let ty = m.y() - (s * c + co * c);
    Affine2D::new([[co, -s], [s, co]], [tx, ty]).expect("rotation is non-singular")
}

/// Resamples `img` so that `m` lands at the patch center pointing to `+x`.
pub fn align_to_minutia(img: &GrayImage, m: &Minutia, patch_size: usize) -> Result<Patch> {
    if patch_size == 0 {
        return Err(DmdError::InvalidArgument("patch size must be positive".into()));
    }
    if !img.contains(m.x(), m.y()) {
        return Err(DmdError::MinutiaOutOfBounds {
            x: m.x(),
            y: m.y(),
            width: img.width(),
            height: img.height(),
        });
    }
    let frame = patch_frame(m, patch_size);
    let src = img.raster();
    let pixels = Raster::from_fn(patch_size, patch_size, |u, v| {
        let [x, y] = frame.apply([u as f64, v as f64]);
        src.sample_bilinear(x, y, BACKGROUND)
    });
    Ok(Patch {
        image: GrayImage::from_raster_clamped(pixels),
        anchor: *m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn test_image(w: usize, h: usize) -> GrayImage {
        GrayImage::from_raster_clamped(Raster::from_fn(w, h, |x, y| {
            let v = ((x * 7 + y * 13) % 29) as f64 / 28.0;
            0.5 * v + 0.25 * ((x as f64 * 0.3).sin() + 1.0) * 0.5
        }))
    }

    #[test]
    fn identity_alignment_is_crop() {
        let img = test_image(200, 180);
        let m = Minutia::new(100.0, 90.0, 0.0);
        let p = align_to_minutia(&img, &m, 64).unwrap();
        for v in 0..64 {
            for u in 0..64 {
                assert_eq!(p.image.get(u, v), img.get(100 + u - 32, 90 + v - 32));
            }
        }
    }

    #[test]
    fn half_turn_matches_rotate_then_crop() {
        let img = test_image(200, 200);
        let m = Minutia::new(100.0, 100.0, PI);
        let p = align_to_minutia(&img, &m, 128).unwrap();
        // oracle: rotate by 180 degrees about m by index reflection, then crop
        let rotated = Raster::from_fn(200, 200, |x, y| {
            let sx = 200 - x;
            let sy = 200 - y;
            if sx < 200 && sy < 200 {
                img.get(sx, sy)
            } else {
                BACKGROUND
            }
        });
        for v in 0..128 {
            for u in 0..128 {
                let expected = *rotated.get(100 + u - 64, 100 + v - 64);
                assert!((p.image.get(u, v) - expected).abs() < 1e-9, "({u},{v})");
            }
        }
    }

    #[test]
    fn border_minutia_pads_white() {
        let img = GrayImage::filled(100, 100, 0.2);
        let m = Minutia::new(5.0, 50.0, 0.0);
        let p = align_to_minutia(&img, &m, 32).unwrap();
        assert_eq!(p.image.get(0, 16), BACKGROUND);
        assert_eq!(p.image.get(16, 16), 0.2);
        assert_eq!(p.image.get(31, 16), 0.2);
    }

    #[test]
    fn outside_minutia_rejected() {
        let img = GrayImage::filled(50, 50, 0.5);
        let m = Minutia::new(60.0, 10.0, 0.0);
        assert!(matches!(
            align_to_minutia(&img, &m, 32),
            Err(DmdError::MinutiaOutOfBounds { .. })
        ));
    }

    #[test]
    fn center_pixel_is_bilinear_sample_at_anchor() {
        let img = test_image(150, 150);
        for (i, theta) in [0.3, 1.7, 4.0, 5.9].iter().enumerate() {
            let m = Minutia::new(60.3 + i as f64 * 7.1, 70.8 - i as f64 * 3.3, *theta);
            let p = align_to_minutia(&img, &m, 128).unwrap();
            let expected = img.raster().sample_bilinear(m.x(), m.y(), BACKGROUND);
            assert!((p.image.get(64, 64) - expected).abs() < 1e-6);
        }
    }
}
