use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::model::{angle_diff, Affine2D, Minutia};

const MINIMAL_SAMPLE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_residual_px: f64,
    /// Maximum direction disagreement (radians) for an inlier.
    pub inlier_angle_rad: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_residual_px: 8.0,
            inlier_angle_rad: 0.35,
            min_inliers: 4,
            seed: 0x5eed,
        }
    }
}

impl RansacConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.inlier_residual_px > 0.0) {
            return Err(DmdError::InvalidArgument(
                "ransac needs iterations >= 1 and a positive residual".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit {
    pub transform: Affine2D,
    pub inliers: Vec<bool>,
}

impl RansacFit {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Solves a 3x3 linear system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Least-squares affine transform mapping `src` points onto `dst` points.
/// Needs at least three non-collinear correspondences.
pub fn fit_affine_least_squares(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Option<Affine2D> {
    if src.len() != dst.len() || src.len() < MINIMAL_SAMPLE {
        return None;
    }
    // center for conditioning
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let s = pts.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        [s[0] / n, s[1] / n]
    };
    let (cs, cd) = (mean(src), mean(dst));
    let mut ata = [[0.0; 3]; 3];
    let mut atx = [0.0; 3];
    let mut aty = [0.0; 3];
    for (p, q) in src.iter().zip(dst) {
        let row = [p[0] - cs[0], p[1] - cs[1], 1.0];
        let (qx, qy) = (q[0] - cd[0], q[1] - cd[1]);
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            atx[i] += row[i] * qx;
            aty[i] += row[i] * qy;
        }
    }
    let rx = solve3(ata, atx)?;
    let ry = solve3(ata, aty)?;
    let linear = [[rx[0], rx[1]], [ry[0], ry[1]]];
    // undo centering: q = L (p - cs) + t' + cd
    let t = [
        rx[2] + cd[0] - (linear[0][0] * cs[0] + linear[0][1] * cs[1]),
        ry[2] + cd[1] - (linear[1][0] * cs[0] + linear[1][1] * cs[1]),
    ];
    Affine2D::new(linear, t).ok()
}

fn mark_inliers(pairs: &[(Minutia, Minutia)], t: &Affine2D, cfg: &RansacConfig) -> Vec<bool> {
    pairs
        .iter()
        .map(|(a, b)| {
            let m = a.transformed(t);
            m.distance(b) < cfg.inlier_residual_px && angle_diff(m.theta(), b.theta()).abs() < cfg.inlier_angle_rad
        })
        .collect()
}

fn refit(pairs: &[(Minutia, Minutia)], inliers: &[bool]) -> Option<Affine2D> {
    let (src, dst): (Vec<_>, Vec<_>) = pairs
        .iter()
        .zip(inliers)
        .filter(|(_, &keep)| keep)
        .map(|((a, b), _)| (a.position(), b.position()))
        .unzip();
    fit_affine_least_squares(&src, &dst)
}

/// Robust affine fit of `pairs[i].0 -> pairs[i].1`.
///
/// Hypotheses come from 3-pair minimal samples; when there are no more
/// distinct triples than `cfg.iterations` every triple is tried. An inlier
/// must agree in position and direction. The winning model is refit by
/// least squares on its inliers. Deterministic for a fixed seed.
pub fn estimate_affine_ransac(pairs: &[(Minutia, Minutia)], cfg: &RansacConfig) -> Result<RansacFit> {
    cfg.validate()?;
    let n = pairs.len();
    if n < MINIMAL_SAMPLE {
        return Err(DmdError::Underdetermined {
            required: MINIMAL_SAMPLE,
            got: n,
        });
    }

    let triples = (n * (n - 1) * (n - 2)) / 6;
    let mut candidates: Vec<[usize; 3]> = Vec::new();
    if triples <= cfg.iterations {
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    candidates.push([i, j, k]);
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.iterations {
            let s = sample(&mut rng, n, MINIMAL_SAMPLE);
            candidates.push([s.index(0), s.index(1), s.index(2)]);
        }
    }

    let mut best: Option<(usize, Affine2D, Vec<bool>)> = None;
    for idx in &candidates {
        let src: Vec<_> = idx.iter().map(|&i| pairs[i].0.position()).collect();
        let dst: Vec<_> = idx.iter().map(|&i| pairs[i].1.position()).collect();
        let Some(t) = fit_affine_least_squares(&src, &dst) else {
            continue;
        };
        let flags = mark_inliers(pairs, &t, cfg);
        let count = flags.iter().filter(|&&b| b).count();
        if best.as_ref().map_or(true, |(c, _, _)| count > *c) {
            best = Some((count, t, flags));
        }
    }

    let Some((mut count, mut model, mut flags)) = best else {
        return Err(DmdError::NoConsensus(cfg.min_inliers));
    };
    if count < cfg.min_inliers.max(MINIMAL_SAMPLE) {
        return Err(DmdError::NoConsensus(cfg.min_inliers));
    }

    // refine: refit on inliers until the inlier set stops growing
    for _ in 0..5 {
        let Some(t) = refit(pairs, &flags) else { break };
        let new_flags = mark_inliers(pairs, &t, cfg);
        let new_count = new_flags.iter().filter(|&&b| b).count();
        if new_count < count {
            break;
        }
        let stable = new_flags == flags;
        model = t;
        flags = new_flags;
        count = new_count;
        if stable {
            break;
        }
    }

    Ok(RansacFit {
        transform: model,
        inliers: flags,
    })
}
