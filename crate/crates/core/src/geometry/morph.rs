use crate::model::{Raster, SegMask};

/// Exact squared Euclidean distance from every cell to the nearest unset
/// cell, treating everything outside the mask as unset.
///
/// Two-pass lower-envelope transform (Felzenszwalb & Huttenlocher).
pub fn squared_distance_to_background(mask: &SegMask) -> Raster<f64> {
    let (w, h) = (mask.width(), mask.height());
    // one cell of background padding on every side
    let (pw, ph) = (w + 2, h + 2);
    // larger than any in-grid squared distance, small enough to keep precision
    let inf = ((pw + ph) * (pw + ph)) as f64;
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.is_set(x, y) {
                grid[(y + 1) * pw + x + 1] = inf;
            }
        }
    }

    let mut f = vec![0.0; pw.max(ph)];
    let mut d = vec![0.0; pw.max(ph)];
    let mut v = vec![0usize; pw.max(ph)];
    let mut z = vec![0.0; pw.max(ph) + 1];

    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        transform_1d(&f[..ph], &mut d[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = d[y];
        }
    }
    for y in 0..ph {
        f[..pw].copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        transform_1d(&f[..pw], &mut d[..pw], &mut v, &mut z);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&d[..pw]);
    }

    Raster::from_fn(w, h, |x, y| grid[(y + 1) * pw + x + 1])
}

fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
    };
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        d[q] = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Morphological erosion by a Euclidean disc of `radius` cells: a cell
/// survives iff every cell within distance `radius` (out-of-bounds cells
/// count as unset) is set. Values are read through the `>= 0.5` hard view.
pub fn erode_mask(mask: &SegMask, radius: u32) -> SegMask {
    let dist2 = squared_distance_to_background(mask);
    let r2 = (radius as f64) * (radius as f64);
    SegMask::from_fn(mask.width(), mask.height(), |x, y| *dist2.get(x, y) > r2)
}
