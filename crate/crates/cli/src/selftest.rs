use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dmd::config::RunConfig;
use dmd::descriptor::{DenseDescriptor, CELLS};
use dmd::matcher::{local_similarity, lsa_hungarian, match_templates, select_nm, MatchConfig, SimilarityMatrix};
use dmd::minutiae_map::{decode_minutiae_map, encode_minutiae};
use dmd::model::{angle_diff, Minutia};
use dmd::synth::{apply_distortion, extract_template, synth_fingerprint, DistortionConfig};

type Check = fn(&RunConfig, &mut ChaCha8Rng) -> Result<String>;

pub fn run(cfg: &RunConfig) -> Result<()> {
    let checks: [(&str, Check); 6] = [
        ("top-n selection table", check_select_nm),
        ("local similarity vs naive evaluation", check_local_similarity),
        ("assignment vs exhaustive search", check_assignment),
        ("binary payload size", check_binary_size),
        ("minutiae map round trip", check_map),
        ("synthetic genuine vs impostor", check_synthetic),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut failed = 0;
    for (name, check) in checks {
        match check(cfg, &mut rng) {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e:#}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} self-test check(s) failed");
    }
    Ok(())
}

fn check_select_nm(_: &RunConfig, _: &mut ChaCha8Rng) -> Result<String> {
    let cfg = MatchConfig::default();
    for (na, nb, want) in [(20, 20, 8), (20, 1000, 8), (30, 30, 12), (10, 40, 4), (1000, 1000, 12)] {
        let got = select_nm(na, nb, &cfg);
        if got != want {
            bail!("({na}, {nb}) gave {got}, expected {want}");
        }
    }
    Ok("5 cases".into())
}

fn random_descriptor(rng: &mut ChaCha8Rng, mask: &[f32; CELLS]) -> DenseDescriptor {
    let c = 6;
    let features = (0..2 * c * CELLS)
        .map(|i| rng.gen_range(-1.0f32..1.0) * mask[i % CELLS])
        .collect();
    let anchor = Minutia::new(
        rng.gen_range(0.0..200.0),
        rng.gen_range(0.0..200.0),
        rng.gen_range(0.0..6.28),
    );
    DenseDescriptor::from_parts(c, features, *mask, anchor).expect("valid descriptor")
}

/// Bilinear value of an 8×8 mask at fine cell (fx, fy) of a 64×64 lattice.
fn upsampled(mask: &[f32; CELLS], fx: usize, fy: usize) -> f64 {
    let src = |f: usize| ((f as f64 + 0.5) / 8.0 - 0.5).clamp(0.0, 7.0);
    let (sx, sy) = (src(fx), src(fy));
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(7), (y0 + 1).min(7));
    let (tx, ty) = (sx - x0 as f64, sy - y0 as f64);
    let m = |x: usize, y: usize| mask[y * 8 + x] as f64;
    (1.0 - ty) * ((1.0 - tx) * m(x0, y0) + tx * m(x1, y0)) + ty * ((1.0 - tx) * m(x0, y1) + tx * m(x1, y1))
}

fn naive_similarity(a: &DenseDescriptor, b: &DenseDescriptor, h_ref: f64) -> f64 {
    let (fa, fb) = (a.features(), b.features());
    let (ma, mb) = (a.mask(), b.mask());
    let mut num = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..fa.len() {
        let k = i % CELLS;
        num += fa[i] as f64 * fb[i] as f64;
        na += (fa[i] as f64 * mb[k] as f64).powi(2);
        nb += (fb[i] as f64 * ma[k] as f64).powi(2);
    }
    let mut shared = 0.0;
    for fy in 0..64 {
        for fx in 0..64 {
            if upsampled(ma, fx, fy) >= 0.5 && upsampled(mb, fx, fy) >= 0.5 {
                shared += 1.0;
            }
        }
    }
    if na == 0.0 || nb == 0.0 || shared == 0.0 {
        return 0.0;
    }
    num / (na.sqrt() * nb.sqrt()) * (shared / h_ref).sqrt()
}

fn check_local_similarity(_: &RunConfig, rng: &mut ChaCha8Rng) -> Result<String> {
    let cfg = MatchConfig::default();
    let full = [1.0f32; CELLS];
    let d = random_descriptor(rng, &full);
    let own = local_similarity(&d, &d, &cfg)?;
    let want = (4096.0f64 / 1326.0).sqrt();
    if (own - want).abs() > 1e-9 {
        bail!("self similarity {own}, expected {want}");
    }
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mut ma = [0.0f32; CELLS];
        let mut mb = [0.0f32; CELLS];
        for k in 0..CELLS {
            ma[k] = f32::from(rng.gen_bool(0.7));
            mb[k] = f32::from(rng.gen_bool(0.7));
        }
        let (a, b) = (random_descriptor(rng, &ma), random_descriptor(rng, &mb));
        let got = local_similarity(&a, &b, &cfg)?;
        worst = worst.max((got - naive_similarity(&a, &b, cfg.h_o)).abs());
    }
    if worst > 1e-9 {
        bail!("max deviation {worst:e}");
    }
    Ok(format!("200 pairs, max deviation {worst:.1e}"))
}

fn best_by_permutation(m: &[Vec<f64>]) -> f64 {
    fn go(m: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == m.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(m[row][j] + go(m, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(m, 0, &mut vec![false; m[0].len()])
}

fn check_assignment(_: &RunConfig, rng: &mut ChaCha8Rng) -> Result<String> {
    for t in 0..200 {
        let n = rng.gen_range(1..=5);
        let cols = rng.gen_range(n..=6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let s = SimilarityMatrix::from_rows(&rows)?;
        let got: f64 = lsa_hungarian(&s).iter().map(|&(i, j)| rows[i][j]).sum();
        let want = best_by_permutation(&rows);
        if (got - want).abs() > 1e-9 {
            bail!("case {t}: assignment total {got}, optimum {want}");
        }
    }
    Ok("200 matrices".into())
}

fn check_binary_size(_: &RunConfig, rng: &mut ChaCha8Rng) -> Result<String> {
    let d = random_descriptor(rng, &[1.0; CELLS]);
    let n = d.binarize().feature_bytes().len();
    if n != 96 {
        bail!("payload {n} bytes");
    }
    Ok("96 bytes per record".into())
}

fn check_map(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<String> {
    let mut ok = 0;
    let trials = 200;
    for _ in 0..trials {
        let m = Minutia::new(
            rng.gen_range(8.0..120.0),
            rng.gen_range(8.0..120.0),
            rng.gen_range(0.0..6.28),
        );
        let decoded = decode_minutiae_map(&encode_minutiae(&[m], &cfg.map)?, 0.5)?;
        if decoded.len() == 1 {
            let d = decoded.as_slice()[0];
            if d.distance(&m) <= 1.0 && angle_diff(d.theta(), m.theta()).abs() <= 0.1 {
                ok += 1;
            }
        }
    }
    if ok * 100 < trials * 99 {
        bail!("{ok}/{trials} recovered");
    }
    Ok(format!("{ok}/{trials} recovered"))
}

fn check_synthetic(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<String> {
    let (s1, s2) = (rng.gen(), rng.gen());
    let a = synth_fingerprint(s1, cfg.synth_size)?;
    let b = apply_distortion(
        &a,
        &DistortionConfig {
            magnitude: 4.0,
            grid: 4,
            seed: rng.gen(),
        },
    )?;
    let c = synth_fingerprint(s2, cfg.synth_size)?;
    let (ta, tb, tc) = (
        extract_template(&a, &cfg.oracle)?,
        extract_template(&b, &cfg.oracle)?,
        extract_template(&c, &cfg.oracle)?,
    );
    let genuine = match_templates(&ta, &tb, &cfg.matcher)?.score;
    let impostor = match_templates(&ta, &tc, &cfg.matcher)?.score;
    if genuine <= impostor {
        bail!("genuine {genuine:.3} not above impostor {impostor:.3}");
    }
    Ok(format!("genuine {genuine:.3}, impostor {impostor:.3}"))
}
