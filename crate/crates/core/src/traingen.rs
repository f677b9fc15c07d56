//! Mated-minutiae selection for training data and the aligned patch pairs
//! built from it.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::geometry::{
    align_to_minutia, erode_mask, estimate_affine_ransac, farthest_point_sampling, Patch, RansacConfig,
    DEFAULT_PATCH_SIZE,
};
use crate::mcc::{build_cylinders, mcc_local_similarity, MccParams};
use crate::model::{GrayImage, MinutiaSet, SegMask};
use crate::synth::SynthFingerprint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainGenConfig {
    /// Candidate pairs kept after MCC scoring.
    pub top_n: usize,
    /// Maximum pairs kept per fingerprint pair.
    pub fps_k: usize,
    pub erosion_radius: u32,
    pub ransac: RansacConfig,
    pub patch_size: usize,
    pub mcc: MccParams,
}

impl Default for TrainGenConfig {
    fn default() -> Self {
        Self {
            top_n: 12,
            fps_k: 5,
            erosion_radius: 16,
            ransac: RansacConfig::default(),
            patch_size: DEFAULT_PATCH_SIZE,
            mcc: MccParams::default(),
        }
    }
}

impl TrainGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_n >= self.fps_k && self.fps_k >= 1) {
            return Err(DmdError::InvalidArgument("need top_n >= fps_k >= 1".into()));
        }
        if self.patch_size == 0 {
            return Err(DmdError::InvalidArgument("patch size must be positive".into()));
        }
        Ok(())
    }
}

/// One fingerprint impression: image, minutiae and foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Impression {
    pub image: GrayImage,
    pub minutiae: MinutiaSet,
    pub mask: SegMask,
}

impl From<&SynthFingerprint> for Impression {
    fn from(fp: &SynthFingerprint) -> Self {
        Self {
            image: fp.image.clone(),
            minutiae: fp.minutiae.clone(),
            mask: fp.mask.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatedPair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// Candidate pairs by descending MCC similarity, one-to-one, greedy.
fn top_mcc_pairs(a: &Impression, b: &Impression, cfg: &TrainGenConfig) -> Result<Vec<MatedPair>> {
    let ca = build_cylinders(&a.minutiae, &cfg.mcc)?;
    let cb = build_cylinders(&b.minutiae, &cfg.mcc)?;
    let mut all = Vec::new();
    for (i, x) in ca.iter().enumerate().filter(|(_, c)| c.is_valid()) {
        for (j, y) in cb.iter().enumerate().filter(|(_, c)| c.is_valid()) {
            let score = mcc_local_similarity(x, y)?;
            if score > 0.0 {
                all.push(MatedPair { a: i, b: j, score });
            }
        }
    }
    // stable: ties keep (a, b) order
    all.sort_by(|p, q| q.score.total_cmp(&p.score));
    let mut used_a = vec![false; a.minutiae.len()];
    let mut used_b = vec![false; b.minutiae.len()];
    let mut out = Vec::with_capacity(cfg.top_n);
    for p in all {
        if out.len() == cfg.top_n {
            break;
        }
        if !used_a[p.a] && !used_b[p.b] {
            used_a[p.a] = true;
            used_b[p.b] = true;
            out.push(p);
        }
    }
    Ok(out)
}

/// Selects up to `fps_k` well-spread, geometrically consistent mated
/// minutiae between two impressions of one finger. Returns an empty list
/// when fewer than three candidates survive the geometric check.
pub fn select_mated_minutiae(a: &Impression, b: &Impression, cfg: &TrainGenConfig) -> Result<Vec<MatedPair>> {
    cfg.validate()?;
    if a.minutiae.len() < 3 || b.minutiae.len() < 3 {
        return Err(DmdError::Underdetermined {
            required: 3,
            got: a.minutiae.len().min(b.minutiae.len()),
        });
    }
    let candidates = top_mcc_pairs(a, b, cfg)?;

    let ea = erode_mask(&a.mask, cfg.erosion_radius);
    let eb = erode_mask(&b.mask, cfg.erosion_radius);
    let inside: Vec<MatedPair> = candidates
        .into_iter()
        .filter(|p| {
            let (ma, mb) = (a.minutiae.as_slice()[p.a], b.minutiae.as_slice()[p.b]);
            ea.contains_point(ma.x(), ma.y()) && eb.contains_point(mb.x(), mb.y())
        })
        .collect();
    if inside.len() < 3 {
        return Ok(Vec::new());
    }

    let corr: Vec<_> = inside
        .iter()
        .map(|p| (a.minutiae.as_slice()[p.a], b.minutiae.as_slice()[p.b]))
        .collect();
    let fit = match estimate_affine_ransac(&corr, &cfg.ransac) {
        Ok(f) => f,
        Err(DmdError::NoConsensus(_) | DmdError::Underdetermined { .. }) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let kept: Vec<MatedPair> = inside
        .into_iter()
        .zip(&fit.inliers)
        .filter_map(|(p, &ok)| ok.then_some(p))
        .collect();
    if kept.len() < 3 {
        return Ok(Vec::new());
    }

    let pts: Vec<[f64; 2]> = kept.iter().map(|p| a.minutiae.as_slice()[p.a].position()).collect();
    // candidates are sorted by score, so the first survivor scores highest
    let order = farthest_point_sampling(&pts, cfg.fps_k, 0)?;
    Ok(order.into_iter().map(|i| kept[i]).collect())
}

/// Selection over many impression pairs, in parallel; entry order follows
/// the input.
pub fn select_batch(pairs: &[(Impression, Impression)], cfg: &TrainGenConfig) -> Vec<Result<Vec<MatedPair>>> {
    pairs
        .par_iter()
        .map(|(a, b)| select_mated_minutiae(a, b, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub a: Patch,
    pub b: Patch,
    pub class_id: usize,
}

/// Aligned patches for each mated pair; class ids count up from `first_class`.
pub fn generate_patch_pairs(
    a: &Impression,
    b: &Impression,
    pairs: &[MatedPair],
    cfg: &TrainGenConfig,
    first_class: usize,
) -> Result<Vec<PatchPair>> {
    pairs
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let ma = a
                .minutiae
                .get(p.a)
                .ok_or(DmdError::InvalidArgument(format!("no minutia {} in A", p.a)))?;
            let mb = b
                .minutiae
                .get(p.b)
                .ok_or(DmdError::InvalidArgument(format!("no minutia {} in B", p.b)))?;
            Ok(PatchPair {
                a: align_to_minutia(&a.image, ma, cfg.patch_size)?,
                b: align_to_minutia(&b.image, mb, cfg.patch_size)?,
                class_id: first_class + k,
            })
        })
        .collect()
}

/// Writes each pair as two PNGs under `dir` and one manifest line per pair:
/// `class_id pathA pathB ax ay atheta bx by btheta` (angles in radians).
pub fn write_patch_pairs(dir: &Path, pairs: &[PatchPair], manifest: &mut impl Write) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for p in pairs {
        let name_a = format!("{:06}_a.png", p.class_id);
        let name_b = format!("{:06}_b.png", p.class_id);
        p.a.image.to_luma8().save(dir.join(&name_a))?;
        p.b.image.to_luma8().save(dir.join(&name_b))?;
        let (ma, mb) = (p.a.anchor, p.b.anchor);
        writeln!(
            manifest,
            "{} {} {} {} {} {} {} {} {}",
            p.class_id,
            name_a,
            name_b,
            ma.x(),
            ma.y(),
            ma.theta(),
            mb.x(),
            mb.y(),
            mb.theta()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Patch;
    use crate::model::{Affine2D, Minutia};
    use crate::synth::{synth_fingerprint, FingerModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn with_spurious(fp: &SynthFingerprint, count: usize, seed: u64) -> (Impression, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ms: Vec<Minutia> = fp.minutiae.as_slice().to_vec();
        let genuine = ms.len();
        while ms.len() < genuine + count {
            let p = [
                rng.gen_range(0.0..fp.width() as f64),
                rng.gen_range(0.0..fp.height() as f64),
            ];
            if fp.mask.contains_point(p[0], p[1]) && ms.iter().all(|m| (m.x() - p[0]).hypot(m.y() - p[1]) > 10.0) {
                ms.push(Minutia::new(p[0], p[1], rng.gen_range(0.0..std::f64::consts::TAU)));
            }
        }
        let mut imp = Impression::from(fp);
        imp.minutiae = MinutiaSet::new(ms, "spurious").unwrap();
        (imp, genuine)
    }

    #[test]
    fn identical_impressions_give_self_pairs() {
        let fp = synth_fingerprint(3, 256).unwrap();
        let a = Impression::from(&fp);
        let pairs = select_mated_minutiae(&a, &a, &TrainGenConfig::default()).unwrap();
        assert!(!pairs.is_empty() && pairs.len() <= 5);
        assert!(pairs.iter().all(|p| p.a == p.b));
        // FPS order: each pick is at least as far from earlier picks as any later one
        let pos: Vec<[f64; 2]> = pairs.iter().map(|p| a.minutiae.as_slice()[p.a].position()).collect();
        let min_to_prev = |i: usize| {
            (0..i)
                .map(|j| (pos[i][0] - pos[j][0]).hypot(pos[i][1] - pos[j][1]))
                .fold(f64::INFINITY, f64::min)
        };
        for i in 2..pos.len() {
            assert!(min_to_prev(i - 1) + 1e-9 >= min_to_prev(i));
        }
        let patches = generate_patch_pairs(&a, &a, &pairs, &TrainGenConfig::default(), 7).unwrap();
        for (k, pp) in patches.iter().enumerate() {
            assert_eq!(pp.a, pp.b);
            assert_eq!(pp.class_id, 7 + k);
        }
    }

    #[test]
    fn planted_motion_with_spurious_minutiae() {
        let cfg = TrainGenConfig::default();
        let mut total = 0;
        for seed in 0..8u64 {
            let model = FingerModel::random(seed, 256).unwrap();
            let a_fp = model.render(256, &Affine2D::identity());
            let t = Affine2D::rotation_about(0.2, 128.0, 128.0).then_after(&Affine2D::translation(5.0, -7.0));
            let b_fp = model.render(256, &t);
            let a = Impression::from(&a_fp);
            let (b, genuine) = with_spurious(&b_fp, 2, seed);
            let pairs = select_mated_minutiae(&a, &b, &cfg).unwrap();
            assert!(pairs.len() <= 5);
            for p in &pairs {
                assert!(p.b < genuine, "spurious minutia selected");
                let want = a.minutiae.as_slice()[p.a].transformed(&t);
                assert!(want.distance(&b.minutiae.as_slice()[p.b]) < 1e-6);
            }
            let patches = generate_patch_pairs(&a, &b, &pairs, &cfg, 0).unwrap();
            for pp in &patches {
                let diff = mean_abs_diff(&pp.a, &pp.b);
                assert!(diff < 0.02, "{diff}");
            }
            total += pairs.len();
        }
        assert!(total >= 20);
    }

    fn mean_abs_diff(a: &Patch, b: &Patch) -> f64 {
        let (x, y) = (a.image.raster().data(), b.image.raster().data());
        x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn eroded_away_masks_give_nothing() {
        let fp = synth_fingerprint(5, 256).unwrap();
        let a = Impression::from(&fp);
        let cfg = TrainGenConfig {
            erosion_radius: 200,
            ..Default::default()
        };
        assert!(select_mated_minutiae(&a, &a, &cfg).unwrap().is_empty());
    }

    #[test]
    fn config_and_input_checks() {
        let fp = synth_fingerprint(5, 256).unwrap();
        let a = Impression::from(&fp);
        let bad = TrainGenConfig {
            top_n: 3,
            fps_k: 5,
            ..Default::default()
        };
        assert!(select_mated_minutiae(&a, &a, &bad).is_err());
        let mut few = a.clone();
        few.minutiae = MinutiaSet::new(a.minutiae.as_slice()[..2].to_vec(), "few").unwrap();
        assert!(select_mated_minutiae(&few, &a, &TrainGenConfig::default()).is_err());
        assert!(generate_patch_pairs(&a, &a, &[], &TrainGenConfig::default(), 0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn deterministic() {
        let fp = synth_fingerprint(9, 256).unwrap();
        let a = Impression::from(&fp);
        let (b, _) = with_spurious(&fp, 3, 1);
        let cfg = TrainGenConfig::default();
        assert_eq!(
            select_mated_minutiae(&a, &b, &cfg).unwrap(),
            select_mated_minutiae(&a, &b, &cfg).unwrap()
        );
    }

    #[test]
    fn writes_manifest_and_pngs() {
        let fp = synth_fingerprint(3, 256).unwrap();
        let a = Impression::from(&fp);
        let cfg = TrainGenConfig::default();
        let pairs = select_mated_minutiae(&a, &a, &cfg).unwrap();
        let patches = generate_patch_pairs(&a, &a, &pairs, &cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = Vec::new();
        write_patch_pairs(dir.path(), &patches, &mut manifest).unwrap();
        let text = String::from_utf8(manifest).unwrap();
        assert_eq!(text.lines().count(), patches.len());
        let first: Vec<&str> = text.lines().next().unwrap().split(' ').collect();
        assert_eq!(first.len(), 9);
        assert!(dir.path().join(first[1]).exists());
    }
}
