//! Six-channel Gaussian heatmap encoding of a minutia set over a 64×64 grid.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::model::{normalize_angle, Minutia, MinutiaSet};

pub const MAP_CHANNELS: usize = 6;
pub const MAP_SIDE: usize = 64;
/// Patch pixels per map cell for a 128×128 patch.
pub const MAP_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Positional spread in map cells.
    pub sigma_pos: f64,
    /// Angular spread in channel units (one unit = 60 degrees).
    pub sigma_ang: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            sigma_pos: 1.0,
            sigma_ang: 1.0,
        }
    }
}

impl MapConfig {
    fn validate(&self) -> Result<()> {
        if !(self.sigma_pos > 0.0 && self.sigma_ang > 0.0) {
            return Err(DmdError::InvalidArgument("map sigmas must be positive".into()));
        }
        Ok(())
    }
}

/// Heatmap of shape `6 × 64 × 64`, stored channel-major then row then column.
#[derive(Debug, Clone, PartialEq)]
pub struct MinutiaeMap {
    values: Vec<f64>,
    scale: f64,
}

#[inline]
fn idx(c: usize, y: usize, x: usize) -> usize {
    (c * MAP_SIDE + y) * MAP_SIDE + x
}

fn circular_channel_distance(k: usize, t: f64) -> f64 {
    let n = MAP_CHANNELS as f64;
    let d = (k as f64 - t).rem_euclid(n);
    d.min(n - d)
}

impl MinutiaeMap {
    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; MAP_CHANNELS * MAP_SIDE * MAP_SIDE],
            scale: MAP_SCALE,
        }
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != MAP_CHANNELS * MAP_SIDE * MAP_SIDE {
            return Err(DmdError::ShapeMismatch(format!(
                "minutiae map needs {} values, got {}",
                MAP_CHANNELS * MAP_SIDE * MAP_SIDE,
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DmdError::InvalidArgument(
                "minutiae map values must lie in [0,1]".into(),
            ));
        }
        Ok(Self {
            values,
            scale: MAP_SCALE,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[idx(c, y, x)]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Encodes minutiae given in patch coordinates (`[0,128)²`).
pub fn encode_minutiae_map(ms: &MinutiaSet, cfg: &MapConfig) -> Result<MinutiaeMap> {
    encode_minutiae(ms.as_slice(), cfg)
}

pub fn encode_minutiae(ms: &[Minutia], cfg: &MapConfig) -> Result<MinutiaeMap> {
    cfg.validate()?;
    let extent = MAP_SIDE as f64 * MAP_SCALE;
    let mut map = MinutiaeMap::zeros();
    let inv_p = 1.0 / (2.0 * cfg.sigma_pos * cfg.sigma_pos);
    let inv_a = 1.0 / (2.0 * cfg.sigma_ang * cfg.sigma_ang);
    for m in ms {
        if !(0.0..extent).contains(&m.x()) || !(0.0..extent).contains(&m.y()) {
            return Err(DmdError::MinutiaOutOfBounds {
                x: m.x(),
                y: m.y(),
                width: extent as usize,
                height: extent as usize,
            });
        }
        let (cx, cy) = (m.x() / MAP_SCALE, m.y() / MAP_SCALE);
        let t = m.theta() * MAP_CHANNELS as f64 / TAU;
        let gx: Vec<f64> = (0..MAP_SIDE).map(|x| (x as f64 - cx).powi(2) * inv_p).collect();
        let gy: Vec<f64> = (0..MAP_SIDE).map(|y| (y as f64 - cy).powi(2) * inv_p).collect();
        for c in 0..MAP_CHANNELS {
            let ga = circular_channel_distance(c, t).powi(2) * inv_a;
            for y in 0..MAP_SIDE {
                for x in 0..MAP_SIDE {
                    let v = (-(gx[x] + gy[y] + ga)).exp();
                    let cell = &mut map.values[idx(c, y, x)];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
    Ok(map)
}

/// Sub-cell offset of the vertex of the parabola through `(−1,l), (0,c), (1,r)`
/// in the log domain, where a Gaussian profile is exactly quadratic.
fn log_parabola_offset(l: f64, c: f64, r: f64) -> f64 {
    if l <= 0.0 || r <= 0.0 {
        return 0.0;
    }
    let (l, c, r) = (l.ln(), c.ln(), r.ln());
    let denom = l - 2.0 * c + r;
    if denom >= -1e-12 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

/// Recovers minutiae from a heatmap as thresholded 3D local maxima
/// (channels wrap around), refined to sub-cell precision.
pub fn decode_minutiae_map(map: &MinutiaeMap, threshold: f64) -> Result<MinutiaSet> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(DmdError::InvalidArgument("threshold must lie in (0,1)".into()));
    }
    let n = MAP_SIDE as isize;
    let nc = MAP_CHANNELS as isize;
    let mut found = Vec::new();
    for c in 0..MAP_CHANNELS {
        for y in 0..MAP_SIDE {
            for x in 0..MAP_SIDE {
                let v = map.get(c, y, x);
                if v < threshold {
                    continue;
                }
                let here = idx(c, y, x);
                let mut is_max = true;
                'scan: for dc in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dc == 0 && dy == 0 && dx == 0 {
                                continue;
                            }
                            let (ny, nx) = (y as isize + dy, x as isize + dx);
                            if ny < 0 || nx < 0 || ny >= n || nx >= n {
                                continue;
                            }
                            let ncc = (c as isize + dc).rem_euclid(nc) as usize;
                            let j = idx(ncc, ny as usize, nx as usize);
                            let w = map.values[j];
                            // plateaus resolve to their first cell in storage order
                            if w > v || (w == v && j < here) {
                                is_max = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if !is_max {
                    continue;
                }
                let at = |cc: isize, yy: isize, xx: isize| -> f64 {
                    if yy < 0 || xx < 0 || yy >= n || xx >= n {
                        return 0.0;
                    }
                    map.get(cc.rem_euclid(nc) as usize, yy as usize, xx as usize)
                };
                let (ci, yi, xi) = (c as isize, y as isize, x as isize);
                let ox = log_parabola_offset(at(ci, yi, xi - 1), v, at(ci, yi, xi + 1));
                let oy = log_parabola_offset(at(ci, yi - 1, xi), v, at(ci, yi + 1, xi));
                let oc = log_parabola_offset(at(ci - 1, yi, xi), v, at(ci + 1, yi, xi));
                let px = ((x as f64 + ox) * map.scale).max(0.0);
                let py = ((y as f64 + oy) * map.scale).max(0.0);
                let theta = normalize_angle((c as f64 + oc) * TAU / MAP_CHANNELS as f64);
                found.push(Minutia::new(px, py, theta));
            }
        }
    }
    Ok(MinutiaSet::dedup(found, "decoded"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::angle_diff;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn hand_value(mx: f64, my: f64, mt: f64, c: usize, y: usize, x: usize) -> f64 {
        // independent evaluation: search the three wrapped copies of the angle
        let t = mt / (PI / 3.0);
        let dt = [t - c as f64, t - c as f64 - 6.0, t - c as f64 + 6.0]
            .iter()
            .map(|d| d.abs())
            .fold(f64::INFINITY, f64::min);
        let dx = x as f64 - mx / 2.0;
        let dy = y as f64 - my / 2.0;
        (-(dx * dx / 2.0 + dy * dy / 2.0 + dt * dt / 2.0)).exp()
    }

    #[test]
    fn empty_set_gives_zero_map() {
        let map = encode_minutiae(&[], &MapConfig::default()).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
        assert!(decode_minutiae_map(&map, 0.5).unwrap().is_empty());
    }

    #[test]
    fn single_center_minutia() {
        let map = encode_minutiae(&[Minutia::new(64.0, 64.0, 0.0)], &MapConfig::default()).unwrap();
        assert_eq!(map.get(0, 32, 32), 1.0);
        assert!((map.get(0, 32, 33) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((map.get(0, 32, 33) - 0.6065).abs() < 1e-4);
        for c in 0..6 {
            for y in 20..44 {
                for x in 20..44 {
                    let want = hand_value(64.0, 64.0, 0.0, c, y, x);
                    assert!((map.get(c, y, x) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        let err = encode_minutiae(&[Minutia::new(128.0, 3.0, 0.0)], &MapConfig::default());
        assert!(matches!(err, Err(DmdError::MinutiaOutOfBounds { .. })));
    }

    #[test]
    fn separated_minutiae_combine_by_max() {
        let cfg = MapConfig::default();
        let a = Minutia::new(20.0, 30.0, 1.0);
        let b = Minutia::new(100.0, 90.0, 4.0);
        let both = encode_minutiae(&[a, b], &cfg).unwrap();
        let ma = encode_minutiae(&[a], &cfg).unwrap();
        let mb = encode_minutiae(&[b], &cfg).unwrap();
        for i in 0..both.values().len() {
            assert_eq!(both.values()[i], ma.values()[i].max(mb.values()[i]));
        }
        let dec = decode_minutiae_map(&both, 0.5).unwrap();
        assert_eq!(dec.len(), 2);
    }

    #[test]
    fn wraparound_continuity() {
        let cfg = MapConfig::default();
        let a = encode_minutiae(&[Minutia::new(50.0, 60.0, 359f64.to_radians())], &cfg).unwrap();
        let b = encode_minutiae(&[Minutia::new(50.0, 60.0, 1f64.to_radians())], &cfg).unwrap();
        // Lipschitz bound of exp(-d^2/2) is exp(-1/2); 2 degrees is 1/30 channel
        let bound = (-0.5f64).exp() / 30.0 + 1e-12;
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= bound);
        }
    }

    proptest! {
        #[test]
        fn roundtrip_interior(x in 4.0f64..124.0, y in 4.0f64..124.0, t in 0.0f64..6.283) {
            let m = Minutia::new(x, y, t);
            let map = encode_minutiae(&[m], &MapConfig::default()).unwrap();
            // worst case offsets: half a cell on both axes and half a channel
            let lower = (-(0.25f64 + 0.25 + 0.25) / 2.0).exp();
            prop_assert!(map.max_value() >= lower - 1e-12);
            let dec = decode_minutiae_map(&map, 0.5).unwrap();
            prop_assert_eq!(dec.len(), 1);
            let d = dec.as_slice()[0];
            prop_assert!(d.distance(&m) < 1.0);
            prop_assert!(angle_diff(d.theta(), m.theta()).abs() < 0.1);
        }

        #[test]
        fn channel_aligned_peak_bound(x in 0.0f64..127.0, y in 0.0f64..127.0, k in 0usize..6) {
            let m = Minutia::new(x, y, k as f64 * PI / 3.0);
            let map = encode_minutiae(&[m], &MapConfig::default()).unwrap();
            prop_assert!(map.max_value() >= (-(0.25f64 + 0.25) / 2.0).exp() - 1e-12);
        }

        #[test]
        fn permutation_invariant_and_bounded(
            pts in prop::collection::vec((0.0f64..127.9, 0.0f64..127.9, 0.0f64..6.28), 0..8)
        ) {
            let ms: Vec<Minutia> = pts.iter().map(|&(x, y, t)| Minutia::new(x, y, t)).collect();
            let mut rev = ms.clone();
            rev.reverse();
            let cfg = MapConfig::default();
            let a = encode_minutiae(&ms, &cfg).unwrap();
            let b = encode_minutiae(&rev, &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
