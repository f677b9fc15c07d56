//! Minutia Cylinder-Code local descriptor, used as a baseline matcher and as
//! the pair-scoring front end of training-pair generation.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::model::{angle_diff, Minutia, MinutiaSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MccParams {
    pub radius: f64,
    pub spatial_divisions: usize,
    pub angular_divisions: usize,
    pub sigma_s: f64,
    pub sigma_d: f64,
    /// Minimum fraction of valid spatial cells, both for a cylinder and for
    /// the joint validity of a compared pair.
    pub min_valid_fraction: f64,
    /// Minimum number of minutiae contributing to a cylinder.
    pub min_neighbors: usize,
    pub bit_mode: bool,
}

impl Default for MccParams {
    fn default() -> Self {
        Self {
            radius: 70.0,
            spatial_divisions: 16,
            angular_divisions: 6,
            sigma_s: 7.0,
            sigma_d: 0.436,
            min_valid_fraction: 0.2,
            min_neighbors: 2,
            bit_mode: true,
        }
    }
}

impl MccParams {
    fn validate(&self) -> Result<()> {
        let ok = self.radius > 0.0
            && self.spatial_divisions > 0
            && self.angular_divisions > 0
            && self.sigma_s > 0.0
            && self.sigma_d > 0.0
            && (0.0..=1.0).contains(&self.min_valid_fraction);
        if ok {
            Ok(())
        } else {
            Err(DmdError::InvalidArgument("MCC parameters must be positive".into()))
        }
    }

    fn spatial_cells(&self) -> usize {
        self.spatial_divisions * self.spatial_divisions
    }
}

/// Convex polygon in counter-clockwise order (in the x-right, y-up sense of
/// the cross product), or a degenerate point/segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull {
    vertices: Vec<[f64; 2]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl ConvexHull {
    /// Andrew's monotone chain.
    pub fn of(points: &[[f64; 2]]) -> Self {
        let mut pts = points.to_vec();
        pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        pts.dedup();
        if pts.len() < 3 {
            return Self { vertices: pts };
        }
        let mut lower: Vec<[f64; 2]> = Vec::new();
        for &p in &pts {
            while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(p);
        }
        let mut upper: Vec<[f64; 2]> = Vec::new();
        for &p in pts.iter().rev() {
            while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        Self { vertices: lower }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Boundary points count as inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let v = &self.vertices;
        match v.len() {
            0 => false,
            1 => v[0] == p,
            2 => {
                cross(v[0], v[1], p).abs() < 1e-9
                    && (p[0] - v[0][0]) * (p[0] - v[1][0]) + (p[1] - v[0][1]) * (p[1] - v[1][1]) <= 0.0
            }
            n => (0..n).all(|i| cross(v[i], v[(i + 1) % n], p) >= -1e-9),
        }
    }
}

/// Cylinder of `N_S × N_S × N_D` cells around an anchor minutia, stored
/// spatial-row, spatial-column, then angle.
#[derive(Debug, Clone, PartialEq)]
pub struct MccCylinder {
    anchor: Minutia,
    values: Vec<f64>,
    bits: Vec<bool>,
    cell_valid: Vec<bool>,
    valid: bool,
    params: MccParams,
}

impl MccCylinder {
    pub fn anchor(&self) -> &Minutia {
        &self.anchor
    }

    pub fn is_valid(&self) -> bool {
        self.valid
    }

    /// Cell values normalized to the cylinder maximum.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn cell_valid(&self) -> &[bool] {
        &self.cell_valid
    }

    pub fn params(&self) -> &MccParams {
        &self.params
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.params.spatial_divisions + j) * self.params.angular_divisions + k
    }

    /// Center of spatial cell `(i, j)` in image coordinates.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        cell_center(&self.anchor, &self.params, i, j)
    }
}

fn cell_center(anchor: &Minutia, p: &MccParams, i: usize, j: usize) -> [f64; 2] {
    let ds = 2.0 * p.radius / p.spatial_divisions as f64;
    let half = p.spatial_divisions as f64 / 2.0;
    let (u, v) = ((j as f64 + 0.5 - half) * ds, (i as f64 + 0.5 - half) * ds);
    let (s, c) = anchor.theta().sin_cos();
    [anchor.x() + c * u - s * v, anchor.y() + s * u + c * v]
}

/// Gaussian mass of the angular difference falling inside each angular bin.
fn angular_profile(rel: f64, p: &MccParams) -> Vec<f64> {
    let dd = TAU / p.angular_divisions as f64;
    let k = 1.0 / (p.sigma_d * std::f64::consts::SQRT_2);
    (0..p.angular_divisions)
        .map(|b| {
            let center = -PI + (b as f64 + 0.5) * dd;
            let x = angle_diff(center, rel);
            0.5 * (libm::erf((x + dd / 2.0) * k) - libm::erf((x - dd / 2.0) * k))
        })
        .collect()
}

/// Builds the cylinder of `anchor` from the minutiae of its fingerprint.
/// Spatial cells farther than the radius from the anchor or outside the
/// convex hull of the fingerprint's minutiae are invalid.
pub fn build_cylinder(anchor: &Minutia, neighbors: &MinutiaSet, p: &MccParams) -> MccCylinder {
    let mut pts: Vec<[f64; 2]> = neighbors.iter().map(|m| m.position()).collect();
    pts.push(anchor.position());
    let hull = ConvexHull::of(&pts);
    build_with_hull(anchor, neighbors.as_slice(), &hull, p)
}

fn build_with_hull(anchor: &Minutia, all: &[Minutia], hull: &ConvexHull, p: &MccParams) -> MccCylinder {
    let ns = p.spatial_divisions;
    let nd = p.angular_divisions;
    let reach = p.radius + 3.0 * p.sigma_s;
    let near: Vec<(&Minutia, Vec<f64>)> = all
        .iter()
        .filter(|m| {
            let d = m.distance(anchor);
            d > 1e-9 && d <= reach
        })
        .map(|m| (m, angular_profile(angle_diff(anchor.theta(), m.theta()), p)))
        .collect();

    let mut raw = vec![0.0; ns * ns * nd];
    let mut cell_valid = vec![false; ns * ns];
    let inv = 1.0 / (2.0 * p.sigma_s * p.sigma_s);
    let cut2 = (3.0 * p.sigma_s).powi(2);
    for i in 0..ns {
        for j in 0..ns {
            let c = cell_center(anchor, p, i, j);
            let da = (c[0] - anchor.x()).hypot(c[1] - anchor.y());
            cell_valid[i * ns + j] = da <= p.radius && hull.contains(c);
            for (m, prof) in &near {
                let d2 = (m.x() - c[0]).powi(2) + (m.y() - c[1]).powi(2);
                if d2 > cut2 {
                    continue;
                }
                let g = (-d2 * inv).exp();
                let base = (i * ns + j) * nd;
                for k in 0..nd {
                    raw[base + k] += g * prof[k];
                }
            }
        }
    }
    // invalid cells carry no information
    for s in 0..ns * ns {
        if !cell_valid[s] {
            raw[s * nd..(s + 1) * nd].fill(0.0);
        }
    }
    let max = raw.iter().copied().fold(0.0, f64::max);
    let values: Vec<f64> = if max > 0.0 {
        raw.iter().map(|v| v / max).collect()
    } else {
        raw
    };
    let bits = values.iter().map(|&v| max > 0.0 && v >= 0.5).collect();
    let valid_frac = cell_valid.iter().filter(|&&b| b).count() as f64 / (ns * ns) as f64;
    let valid = near.len() >= p.min_neighbors && valid_frac >= p.min_valid_fraction && max > 0.0;
    MccCylinder {
        anchor: *anchor,
        values,
        bits,
        cell_valid,
        valid,
        params: *p,
    }
}

/// One cylinder per minutia of `set`, in set order.
pub fn build_cylinders(set: &MinutiaSet, p: &MccParams) -> Result<Vec<MccCylinder>> {
    p.validate()?;
    let pts: Vec<[f64; 2]> = set.iter().map(|m| m.position()).collect();
    let hull = ConvexHull::of(&pts);
    Ok(set
        .as_slice()
        .par_iter()
        .map(|m| build_with_hull(m, set.as_slice(), &hull, p))
        .collect())
}

/// Local similarity in `[0,1]` over the jointly valid spatial cells.
pub fn mcc_local_similarity(c1: &MccCylinder, c2: &MccCylinder) -> Result<f64> {
    if !c1.valid || !c2.valid {
        return Err(DmdError::InvalidCylinder);
    }
    if c1.params != c2.params {
        return Err(DmdError::ShapeMismatch(
            "cylinders built with different parameters".into(),
        ));
    }
    let p = &c1.params;
    let nd = p.angular_divisions;
    let joint: Vec<usize> = (0..p.spatial_cells())
        .filter(|&s| c1.cell_valid[s] && c2.cell_valid[s])
        .collect();
    if joint.is_empty() || (joint.len() as f64) < p.min_valid_fraction * p.spatial_cells() as f64 {
        return Ok(0.0);
    }
    let cells = joint.iter().flat_map(|&s| s * nd..(s + 1) * nd);
    if p.bit_mode {
        let differing = cells.filter(|&k| c1.bits[k] != c2.bits[k]).count();
        Ok(1.0 - differing as f64 / (joint.len() * nd) as f64)
    } else {
        let (mut diff, mut na, mut nb) = (0.0, 0.0, 0.0);
        for k in cells {
            let (a, b) = (c1.values[k], c2.values[k]);
            diff += (a - b) * (a - b);
            na += a * a;
            nb += b * b;
        }
        let denom = na.sqrt() + nb.sqrt();
        if denom <= 0.0 {
            return Ok(0.0);
        }
        Ok(1.0 - diff.sqrt() / denom)
    }
}

/// Pairwise similarity between two cylinder lists; invalid cylinders score 0.
pub fn mcc_similarity_matrix(a: &[MccCylinder], b: &[MccCylinder]) -> Vec<Vec<f64>> {
    a.par_iter()
        .map(|ca| b.iter().map(|cb| mcc_local_similarity(ca, cb).unwrap_or(0.0)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Affine2D;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize) -> MinutiaSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n).map(|_| {
            Minutia::new(
                rng.gen_range(100.0..300.0),
                rng.gen_range(100.0..300.0),
                rng.gen_range(0.0..TAU),
            )
        });
        MinutiaSet::dedup(pts, "r")
    }

    #[test]
    fn hull_of_square() {
        let h = ConvexHull::of(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]]);
        assert_eq!(h.vertices().len(), 4);
        assert!(h.contains([0.5, 0.2]));
        assert!(h.contains([1.0, 0.5]));
        assert!(!h.contains([1.1, 0.5]));
    }

    #[test]
    fn empty_neighbourhood_is_invalid() {
        let a = Minutia::new(50.0, 50.0, 0.0);
        let far = MinutiaSet::new(vec![Minutia::new(400.0, 400.0, 1.0)], "f").unwrap();
        let c = build_cylinder(&a, &far, &MccParams::default());
        assert!(!c.is_valid());
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn neighbour_on_cell_center_is_the_maximum() {
        let p = MccParams {
            bit_mode: false,
            min_neighbors: 1,
            ..Default::default()
        };
        let anchor = Minutia::new(200.0, 200.0, 0.7);
        let probe = MccCylinder {
            anchor,
            values: vec![],
            bits: vec![],
            cell_valid: vec![],
            valid: true,
            params: p,
        };
        let (i, j) = (9, 11);
        let c = probe.cell_center(i, j);
        // relative angle equal to the center of angular bin 4
        let dd = TAU / 6.0;
        let rel = -PI + 4.5 * dd;
        let n = Minutia::new(c[0], c[1], anchor.theta() - rel);
        // surround with far-away points so the hull covers the cylinder
        let mut ms = vec![n];
        for (x, y) in [(0.0, 0.0), (400.0, 0.0), (400.0, 400.0), (0.0, 400.0)] {
            ms.push(Minutia::new(x, y, 0.0));
        }
        let set = MinutiaSet::new(ms, "s").unwrap();
        let cyl = build_cylinder(&anchor, &set, &p);
        let best = (0..cyl.values().len())
            .max_by(|&a, &b| cyl.values()[a].total_cmp(&cyl.values()[b]))
            .unwrap();
        assert_eq!(best, cyl.index(i, j, 4));
        assert_eq!(cyl.values()[best], 1.0);
    }

    #[test]
    fn rigid_motion_invariance_float_mode() {
        let p = MccParams {
            bit_mode: false,
            ..Default::default()
        };
        let set = random_set(3, 25);
        let t = Affine2D::rotation_about(1.1, 200.0, 200.0).then_after(&Affine2D::translation(13.0, -4.0));
        let moved = MinutiaSet::new(set.iter().map(|m| m.transformed(&t)).collect(), "m").unwrap();
        let a = build_cylinders(&set, &p).unwrap();
        let b = build_cylinders(&moved, &p).unwrap();
        let mut checked = 0;
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.is_valid(), y.is_valid());
            for (u, v) in x.values().iter().zip(y.values()) {
                assert!((u - v).abs() < 1e-6);
            }
            checked += usize::from(x.is_valid());
        }
        assert!(checked > 10);
        let sa = mcc_similarity_matrix(&a, &a);
        let sb = mcc_similarity_matrix(&b, &b);
        for (r, s) in sa.iter().zip(&sb) {
            for (u, v) in r.iter().zip(s) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_complement_and_popcount_oracle() {
        let set = random_set(8, 30);
        let cyl = build_cylinders(&set, &MccParams::default()).unwrap();
        let valid: Vec<&MccCylinder> = cyl.iter().filter(|c| c.is_valid()).collect();
        assert!(valid.len() >= 2);
        assert_eq!(mcc_local_similarity(valid[0], valid[0]).unwrap(), 1.0);

        let mut comp = valid[0].clone();
        comp.bits.iter_mut().for_each(|b| *b = !*b);
        assert_eq!(mcc_local_similarity(valid[0], &comp).unwrap(), 0.0);

        // independent oracle: pack jointly valid bits into bytes and popcount the XOR
        let (x, y) = (valid[0], valid[1]);
        let pack = |c: &MccCylinder| -> Vec<u8> {
            let mut out = Vec::new();
            let mut byte = 0u8;
            let mut n = 0;
            for s in 0..256 {
                if x.cell_valid()[s] && y.cell_valid()[s] {
                    for k in 0..6 {
                        byte |= (c.bits()[s * 6 + k] as u8) << (n % 8);
                        n += 1;
                        if n % 8 == 0 {
                            out.push(byte);
                            byte = 0;
                        }
                    }
                }
            }
            out.push(byte);
            out
        };
        let (px, py) = (pack(x), pack(y));
        let total = (0..256).filter(|&s| x.cell_valid()[s] && y.cell_valid()[s]).count() * 6;
        let pop: u32 = px.iter().zip(&py).map(|(a, b)| (a ^ b).count_ones()).sum();
        let want = if total as f64 >= 0.2 * 256.0 {
            1.0 - pop as f64 / total as f64
        } else {
            0.0
        };
        assert_eq!(mcc_local_similarity(x, y).unwrap(), want);
    }

    #[test]
    fn symmetric_and_bounded() {
        let a = build_cylinders(&random_set(1, 20), &MccParams::default()).unwrap();
        let b = build_cylinders(&random_set(2, 20), &MccParams::default()).unwrap();
        for x in a.iter().filter(|c| c.is_valid()) {
            for y in b.iter().filter(|c| c.is_valid()) {
                let s = mcc_local_similarity(x, y).unwrap();
                assert_eq!(s, mcc_local_similarity(y, x).unwrap());
                assert!((0.0..=1.0).contains(&s));
            }
        }
    }

    #[test]
    fn invalid_cylinder_is_an_error() {
        let a = Minutia::new(50.0, 50.0, 0.0);
        let c = build_cylinder(&a, &MinutiaSet::empty("e"), &MccParams::default());
        assert!(matches!(mcc_local_similarity(&c, &c), Err(DmdError::InvalidCylinder)));
    }
}
