//! Fingerprint comparison: overlap-normalized local similarity, geometric
//! relaxation, one-to-one assignment and the final top-n mean score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::{overlap_bits, overlap_count, BinaryDescriptor, DenseDescriptor, Template, CELLS};
use crate::error::{DmdError, Result};
use crate::model::{angle_diff, Minutia};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Reference overlap area, in overlap-grid cells.
    pub h_o: f64,
    pub min_nm: usize,
    pub max_nm: usize,
    pub tau: f64,
    pub mu: f64,
    pub relax_iterations: usize,
    pub relax_weight: f64,
    pub overlap_grid: usize,
    pub relax_sigma_dist: f64,
    pub relax_sigma_dir: f64,
    pub relax_sigma_radial: f64,
    /// Multiply local scores by `sqrt(h_o / H_o)`.
    pub normalize_overlap: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            h_o: 1326.0,
            min_nm: 4,
            max_nm: 12,
            tau: 0.4,
            mu: 20.0,
            relax_iterations: 5,
            relax_weight: 0.6,
            overlap_grid: 64,
            relax_sigma_dist: 10.0,
            relax_sigma_dir: 0.26,
            relax_sigma_radial: 0.26,
            normalize_overlap: true,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_nm > 0
            && self.min_nm <= self.max_nm
            && self.tau > 0.0
            && self.h_o > 0.0
            && self.overlap_grid > 0
            && (0.0..=1.0).contains(&self.relax_weight)
            && self.relax_sigma_dist > 0.0
            && self.relax_sigma_dir > 0.0
            && self.relax_sigma_radial > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DmdError::Config("invalid match configuration".into()))
        }
    }

    fn overlap_factor(&self, h_o: u32) -> f64 {
        if self.normalize_overlap {
            (h_o as f64 / self.h_o).sqrt()
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    relaxed: bool,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(DmdError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DmdError::InvalidArgument("similarity entries must be finite".into()));
        }
        Ok(Self {
            rows,
            cols,
            values,
            relaxed: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DmdError::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_relaxed(&self) -> bool {
        self.relaxed
    }

    fn transposed(&self) -> SimilarityMatrix {
        let mut v = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                v[j * self.rows + i] = self.get(i, j);
            }
        }
        SimilarityMatrix {
            rows: self.cols,
            cols: self.rows,
            values: v,
            relaxed: self.relaxed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub score: f64,
    pub pairs: Vec<MatchedPair>,
    /// Number of pairs actually averaged.
    pub n_m: usize,
}

/// Dense descriptor in the form used for repeated comparisons.
struct PreparedDense {
    channels: usize,
    features: Vec<f64>,
    mask: [f64; CELLS],
    /// Per cell, the sum of squared features over channels.
    energy: [f64; CELLS],
    overlap: Vec<u64>,
}

impl PreparedDense {
    fn new(d: &DenseDescriptor, grid: usize) -> Self {
        let features: Vec<f64> = d.features().iter().map(|&v| v as f64).collect();
        let mut mask = [0.0; CELLS];
        for (m, v) in mask.iter_mut().zip(d.mask()) {
            *m = *v as f64;
        }
        let mut energy = [0.0; CELLS];
        for ch in features.chunks_exact(CELLS) {
            for (e, v) in energy.iter_mut().zip(ch) {
                *e += v * v;
            }
        }
        Self {
            channels: d.channels(),
            features,
            mask,
            energy,
            overlap: overlap_bits(&mask, grid),
        }
    }
}

fn prepared_similarity(a: &PreparedDense, b: &PreparedDense, cfg: &MatchConfig) -> f64 {
    let num: f64 = a.features.iter().zip(&b.features).map(|(x, y)| x * y).sum();
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..CELLS {
        na += a.energy[k] * b.mask[k] * b.mask[k];
        nb += b.energy[k] * a.mask[k] * a.mask[k];
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < 1e-9 || nb < 1e-9 {
        return 0.0;
    }
    let h = overlap_count(&a.overlap, &b.overlap);
    if h == 0 {
        return 0.0;
    }
    num / (na * nb) * cfg.overlap_factor(h)
}

/// Cosine of the flattened features under cross-masking, scaled by the square
/// root of the mask overlap area relative to `H_o`.
pub fn local_similarity(da: &DenseDescriptor, db: &DenseDescriptor, cfg: &MatchConfig) -> Result<f64> {
    if da.channels() != db.channels() {
        return Err(DmdError::ShapeMismatch(format!(
            "channel depths {} and {} differ",
            da.channels(),
            db.channels()
        )));
    }
    let a = PreparedDense::new(da, cfg.overlap_grid);
    let b = PreparedDense::new(db, cfg.overlap_grid);
    Ok(prepared_similarity(&a, &b, cfg))
}

struct PreparedBinary<'a> {
    d: &'a BinaryDescriptor,
    overlap: Vec<u64>,
}

impl<'a> PreparedBinary<'a> {
    fn new(d: &'a BinaryDescriptor, grid: usize) -> Self {
        Self {
            d,
            overlap: overlap_bits(&d.mask_values(), grid),
        }
    }
}

fn prepared_binary_similarity(a: &PreparedBinary, b: &PreparedBinary, cfg: &MatchConfig) -> f64 {
    let joint = a.d.mask_bits() & b.d.mask_bits();
    let cells = joint.count_ones() as i64;
    if cells == 0 {
        return 0.0;
    }
    let h = overlap_count(&a.overlap, &b.overlap);
    if h == 0 {
        return 0.0;
    }
    // features are ±1 on their own mask and 0 elsewhere, so both cross-masked
    // norms equal sqrt(2C·|J|) and the inner product runs over J only
    let words = a.d.feature_words().iter().zip(b.d.feature_words());
    let disagree: i64 = words.map(|(x, y)| ((x ^ y) & joint).count_ones() as i64).sum();
    let total = a.d.feature_words().len() as i64 * cells;
    (total - 2 * disagree) as f64 / total as f64 * cfg.overlap_factor(h)
}

/// Binary counterpart of [`local_similarity`], computed with AND/XOR and
/// popcount. Bits map to ±1 and only jointly masked cells contribute.
pub fn binary_local_similarity(ba: &BinaryDescriptor, bb: &BinaryDescriptor, cfg: &MatchConfig) -> Result<f64> {
    if ba.channels() != bb.channels() {
        return Err(DmdError::ShapeMismatch(format!(
            "channel depths {} and {} differ",
            ba.channels(),
            bb.channels()
        )));
    }
    let a = PreparedBinary::new(ba, cfg.overlap_grid);
    let b = PreparedBinary::new(bb, cfg.overlap_grid);
    Ok(prepared_binary_similarity(&a, &b, cfg))
}

fn check_channels<T>(a: &[T], b: &[T], ch: impl Fn(&T) -> usize) -> Result<()> {
    let first = a.iter().chain(b).map(&ch).next();
    if let Some(c) = first {
        if a.iter().chain(b).any(|d| ch(d) != c) {
            return Err(DmdError::ShapeMismatch("descriptors differ in channel depth".into()));
        }
    }
    Ok(())
}

pub fn similarity_matrix(a: &[DenseDescriptor], b: &[DenseDescriptor], cfg: &MatchConfig) -> Result<SimilarityMatrix> {
    check_channels(a, b, |d| d.channels())?;
    let pa: Vec<PreparedDense> = a.iter().map(|d| PreparedDense::new(d, cfg.overlap_grid)).collect();
    let pb: Vec<PreparedDense> = b.iter().map(|d| PreparedDense::new(d, cfg.overlap_grid)).collect();
    debug_assert!(pa.iter().chain(&pb).all(|p| p.channels == pa[0].channels));
    let values = pa
        .iter()
        .flat_map(|x| pb.iter().map(move |y| prepared_similarity(x, y, cfg)))
        .collect();
    SimilarityMatrix::new(a.len(), b.len(), values)
}

pub fn binary_similarity_matrix(
    a: &[BinaryDescriptor],
    b: &[BinaryDescriptor],
    cfg: &MatchConfig,
) -> Result<SimilarityMatrix> {
    check_channels(a, b, |d| d.channels())?;
    let pa: Vec<PreparedBinary> = a.iter().map(|d| PreparedBinary::new(d, cfg.overlap_grid)).collect();
    let pb: Vec<PreparedBinary> = b.iter().map(|d| PreparedBinary::new(d, cfg.overlap_grid)).collect();
    let values = pa
        .iter()
        .flat_map(|x| pb.iter().map(move |y| prepared_binary_similarity(x, y, cfg)))
        .collect();
    SimilarityMatrix::new(a.len(), b.len(), values)
}

pub fn template_similarity_matrix(a: &Template, b: &Template, cfg: &MatchConfig) -> Result<SimilarityMatrix> {
    match (a, b) {
        (Template::Float(x), Template::Float(y)) => similarity_matrix(x, y, cfg),
        (Template::Binary(x), Template::Binary(y)) => binary_similarity_matrix(x, y, cfg),
        _ => Err(DmdError::ShapeMismatch(
            "cannot compare float and binary templates".into(),
        )),
    }
}

/// Pairwise geometry of one minutia set: distance, relative direction and
/// radial angle for every ordered pair.
struct PairGeometry {
    n: usize,
    dist: Vec<f64>,
    dir: Vec<f64>,
    radial: Vec<f64>,
}

impl PairGeometry {
    fn new(ms: &[Minutia]) -> Self {
        let n = ms.len();
        let mut dist = vec![0.0; n * n];
        let mut dir = vec![0.0; n * n];
        let mut radial = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let (a, b) = (&ms[i], &ms[k]);
                dist[i * n + k] = a.distance(b);
                dir[i * n + k] = angle_diff(a.theta(), b.theta());
                radial[i * n + k] = angle_diff(a.theta(), (b.y() - a.y()).atan2(b.x() - a.x()));
            }
        }
        Self { n, dist, dir, radial }
    }
}

/// Compatibilities below `exp(-RHO_CUTOFF)` are dropped; their total weight
/// is far below f64 resolution of any score.
const RHO_CUTOFF: f64 = 36.0;
/// Above this many candidate quadruples the compatibilities are recomputed
/// each round instead of cached.
const CACHE_LIMIT: usize = 1 << 24;

struct Compat<'g> {
    ga: &'g PairGeometry,
    gb: &'g PairGeometry,
    kd: f64,
    kt: f64,
    kr: f64,
}

impl Compat<'_> {
    /// Calls `f(k·n_b + l, ρ)` for every partner pair of `(i, j)` with a
    /// non-negligible compatibility.
    #[inline]
    fn for_each(&self, i: usize, j: usize, mut f: impl FnMut(usize, f64)) {
        let (na, nb) = (self.ga.n, self.gb.n);
        for k in 0..na {
            let ik = i * na + k;
            let (da, ta, ra) = (self.ga.dist[ik], self.ga.dir[ik], self.ga.radial[ik]);
            for l in 0..nb {
                if k == i && l == j {
                    continue;
                }
                let jl = j * nb + l;
                let dd = da - self.gb.dist[jl];
                let mut e = dd * dd * self.kd;
                if e > RHO_CUTOFF {
                    continue;
                }
                let dt = angle_diff(ta, self.gb.dir[jl]);
                e += dt * dt * self.kt;
                if e > RHO_CUTOFF {
                    continue;
                }
                let dr = angle_diff(ra, self.gb.radial[jl]);
                e += dr * dr * self.kr;
                if e > RHO_CUTOFF {
                    continue;
                }
                f(k * nb + l, (-e).exp());
            }
        }
    }
}

/// Geometric-compatibility relaxation. Each round mixes an entry with the
/// compatibility-weighted scores of all other pairs:
/// `S_t(i,j) = w·S_{t−1}(i,j) + (1−w)/(n−1)·Σ ρ(i,j,k,l)·S_{t−1}(k,l)`
/// with `n = min(n_a, n_b)`. Sets with fewer than two minutiae on either side
/// are returned unchanged.
pub fn relax(s: &SimilarityMatrix, a: &[Minutia], b: &[Minutia], cfg: &MatchConfig) -> Result<SimilarityMatrix> {
    if a.len() != s.rows || b.len() != s.cols {
        return Err(DmdError::ShapeMismatch(format!(
            "{}x{} matrix for {} and {} minutiae",
            s.rows,
            s.cols,
            a.len(),
            b.len()
        )));
    }
    let n = a.len().min(b.len());
    let mut out = s.clone();
    out.relaxed = true;
    if n < 2 || cfg.relax_iterations == 0 {
        return Ok(out);
    }
    let (ga, gb) = (PairGeometry::new(a), PairGeometry::new(b));
    let compat = Compat {
        ga: &ga,
        gb: &gb,
        kd: 1.0 / (2.0 * cfg.relax_sigma_dist.powi(2)),
        kt: 1.0 / (2.0 * cfg.relax_sigma_dir.powi(2)),
        kr: 1.0 / (2.0 * cfg.relax_sigma_radial.powi(2)),
    };
    let cells = a.len() * b.len();
    let w = cfg.relax_weight;
    let scale = (1.0 - w) / (n - 1) as f64;

    if cells * cells <= CACHE_LIMIT {
        let mut offsets = Vec::with_capacity(cells + 1);
        let mut idx: Vec<u32> = Vec::new();
        let mut rho: Vec<f64> = Vec::new();
        offsets.push(0);
        for i in 0..a.len() {
            for j in 0..b.len() {
                compat.for_each(i, j, |kl, r| {
                    idx.push(kl as u32);
                    rho.push(r);
                });
                offsets.push(idx.len());
            }
        }
        for _ in 0..cfg.relax_iterations {
            let prev = out.values.clone();
            for ij in 0..cells {
                let acc: f64 = (offsets[ij]..offsets[ij + 1])
                    .map(|t| rho[t] * prev[idx[t] as usize])
                    .sum();
                out.values[ij] = w * prev[ij] + scale * acc;
            }
        }
    } else {
        for _ in 0..cfg.relax_iterations {
            let prev = out.values.clone();
            for i in 0..a.len() {
                for j in 0..b.len() {
                    let mut acc = 0.0;
                    compat.for_each(i, j, |kl, r| acc += r * prev[kl]);
                    out.values[i * b.len() + j] = w * prev[i * b.len() + j] + scale * acc;
                }
            }
        }
    }
    Ok(out)
}

/// Maximum-weight one-to-one assignment of `min(rows, cols)` pairs, returned
/// sorted by row. Shortest augmenting paths with potentials; among equal
/// candidates the lowest column index is taken first.
pub fn lsa_hungarian(s: &SimilarityMatrix) -> Vec<(usize, usize)> {
    if s.rows == 0 || s.cols == 0 {
        return Vec::new();
    }
    if s.rows > s.cols {
        let mut pairs: Vec<(usize, usize)> = lsa_hungarian(&s.transposed())
            .into_iter()
            .map(|(j, i)| (i, j))
            .collect();
        pairs.sort_unstable();
        return pairs;
    }
    let (n, m) = (s.rows, s.cols);
    let cost = |i: usize, j: usize| -s.get(i - 1, j - 1);
    // 1-based arrays; column 0 is a virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

/// Number of top pairs to average: a logistic ramp in the smaller minutia
/// count between `min_nm` and `max_nm`, rounded half away from zero.
pub fn select_nm(n_a: usize, n_b: usize, cfg: &MatchConfig) -> usize {
    let n = n_a.min(n_b) as f64;
    let span = (cfg.max_nm - cfg.min_nm) as f64;
    let ramp = span / (1.0 + (-cfg.tau * (n - cfg.mu)).exp());
    cfg.min_nm + ramp.round() as usize
}

/// Final score from a raw local similarity matrix: relax, assign, then
/// average the `n_m` best assigned relaxed scores.
pub fn score_matrix(s: &SimilarityMatrix, a: &[Minutia], b: &[Minutia], cfg: &MatchConfig) -> Result<MatchResult> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(DmdError::Empty("minutia set"));
    }
    let relaxed = relax(s, a, b, cfg)?;
    let mut pairs: Vec<MatchedPair> = lsa_hungarian(&relaxed)
        .into_iter()
        .map(|(i, j)| MatchedPair {
            a: i,
            b: j,
            score: relaxed.get(i, j),
        })
        .collect();
    // stable: equal scores keep row order
    pairs.sort_by(|x, y| y.score.total_cmp(&x.score));
    let n_m = select_nm(a.len(), b.len(), cfg).min(pairs.len());
    pairs.truncate(n_m);
    let score = pairs.iter().map(|p| p.score).sum::<f64>() / n_m as f64;
    Ok(MatchResult { score, pairs, n_m })
}

pub fn match_score(a: &[DenseDescriptor], b: &[DenseDescriptor], cfg: &MatchConfig) -> Result<MatchResult> {
    if a.is_empty() || b.is_empty() {
        return Err(DmdError::Empty("minutia set"));
    }
    let s = similarity_matrix(a, b, cfg)?;
    let aa: Vec<Minutia> = a.iter().map(|d| *d.anchor()).collect();
    let bb: Vec<Minutia> = b.iter().map(|d| *d.anchor()).collect();
    score_matrix(&s, &aa, &bb, cfg)
}

pub fn match_templates(a: &Template, b: &Template, cfg: &MatchConfig) -> Result<MatchResult> {
    if a.is_empty() || b.is_empty() {
        return Err(DmdError::Empty("minutia set"));
    }
    let s = template_similarity_matrix(a, b, cfg)?;
    score_matrix(&s, &a.anchors(), &b.anchors(), cfg)
}

/// Scores `probe` against every gallery template in parallel and ranks them
/// by descending score; ties keep gallery order.
pub fn identify(probe: &Template, gallery: &[Template], cfg: &MatchConfig) -> Result<Vec<(usize, f64)>> {
    if gallery.is_empty() {
        return Err(DmdError::Empty("gallery"));
    }
    let scores: Vec<f64> = gallery
        .par_iter()
        .map(|g| match_templates(probe, g, cfg).map(|r| r.score))
        .collect::<Result<_>>()?;
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1));
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::assemble_dmd;
    use crate::model::Affine2D;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn anchor() -> Minutia {
        Minutia::new(1.0, 1.0, 0.0)
    }

    fn desc(rng: &mut ChaCha8Rng, full: bool) -> DenseDescriptor {
        let f: Vec<f64> = (0..768).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..64)
            .map(|_| if full { 1.0 } else { rng.gen_range(0.0..=1.0) })
            .collect();
        assemble_dmd(&f[..384], &f[384..], &h, anchor()).unwrap()
    }

    #[test]
    fn self_match_full_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = desc(&mut rng, true);
        let s = local_similarity(&d, &d, &MatchConfig::default()).unwrap();
        assert!((s - (4096.0f64 / 1326.0).sqrt()).abs() < 1e-9);
        assert!((s - 1.7576).abs() < 1e-4);
    }

    #[test]
    fn orthogonal_and_disjoint_are_zero() {
        let mut a = vec![0.0; 384];
        let mut b = vec![0.0; 384];
        a[0] = 1.0;
        b[1] = 1.0;
        let z = vec![0.0; 384];
        let cfg = MatchConfig::default();
        let da = assemble_dmd(&a, &z, &[1.0; 64], anchor()).unwrap();
        let db = assemble_dmd(&b, &z, &[1.0; 64], anchor()).unwrap();
        assert_eq!(local_similarity(&da, &db, &cfg).unwrap(), 0.0);

        let ones = vec![1.0; 384];
        let left: Vec<f64> = (0..64).map(|k| if k % 8 < 4 { 1.0 } else { 0.0 }).collect();
        let right: Vec<f64> = left.iter().map(|v| 1.0 - v).collect();
        let dl = assemble_dmd(&ones, &ones, &left, anchor()).unwrap();
        let dr = assemble_dmd(&ones, &ones, &right, anchor()).unwrap();
        assert_eq!(local_similarity(&dl, &dr, &cfg).unwrap(), 0.0);
        assert_eq!(
            binary_local_similarity(&dl.binarize(), &dr.binarize(), &cfg).unwrap(),
            0.0
        );
    }

    #[test]
    fn binary_identity_and_complement() {
        let cfg = MatchConfig::default();
        let f: Vec<f64> = (0..768).map(|k| if k % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let g: Vec<f64> = f.iter().map(|v| -v).collect();
        let a = assemble_dmd(&f[..384], &f[384..], &[1.0; 64], anchor())
            .unwrap()
            .binarize();
        let b = assemble_dmd(&g[..384], &g[384..], &[1.0; 64], anchor())
            .unwrap()
            .binarize();
        let full = (4096.0f64 / 1326.0).sqrt();
        assert!((binary_local_similarity(&a, &a, &cfg).unwrap() - full).abs() < 1e-12);
        assert!((binary_local_similarity(&a, &b, &cfg).unwrap() + full).abs() < 1e-12);
    }

    #[test]
    fn select_nm_table() {
        let cfg = MatchConfig::default();
        assert_eq!(select_nm(20, 25, &cfg), 8);
        assert_eq!(select_nm(30, 30, &cfg), 12);
        assert_eq!(select_nm(10, 40, &cfg), 4);
        assert_eq!(select_nm(1000, 1000, &cfg), 12);
    }

    #[test]
    fn hungarian_small_cases() {
        let one = SimilarityMatrix::from_rows(&[vec![0.3]]).unwrap();
        assert_eq!(lsa_hungarian(&one), vec![(0, 0)]);
        let diag =
            SimilarityMatrix::from_rows(&[vec![9.0, 1.0, 2.0], vec![1.0, 8.0, 1.0], vec![3.0, 2.0, 7.0]]).unwrap();
        assert_eq!(lsa_hungarian(&diag), vec![(0, 0), (1, 1), (2, 2)]);
        let empty = SimilarityMatrix::new(0, 4, vec![]).unwrap();
        assert!(lsa_hungarian(&empty).is_empty());
    }

    fn brute_max(s: &SimilarityMatrix) -> f64 {
        fn rec(s: &SimilarityMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, rows: usize) {
            if row == rows {
                *best = best.max(acc);
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    rec(s, row + 1, used, acc + s.get(row, j), best, rows);
                    used[j] = false;
                }
            }
        }
        let t = if s.rows() > s.cols() { s.transposed() } else { s.clone() };
        let mut best = f64::NEG_INFINITY;
        rec(&t, 0, &mut vec![false; t.cols()], 0.0, &mut best, t.rows());
        best
    }

    proptest! {
        #[test]
        fn hungarian_matches_exhaustive(r in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = SimilarityMatrix::new(r, c, v).unwrap();
            let pairs = lsa_hungarian(&s);
            prop_assert_eq!(pairs.len(), r.min(c));
            let mut rows: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let mut cols: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            prop_assert_eq!(rows.len(), pairs.len());
            prop_assert_eq!(cols.len(), pairs.len());
            let total: f64 = pairs.iter().map(|&(i, j)| s.get(i, j)).sum();
            prop_assert!((total - brute_max(&s)).abs() < 1e-9);
        }

        #[test]
        fn select_nm_monotone_and_bounded(n in 0usize..200) {
            let cfg = MatchConfig::default();
            let a = select_nm(n, n + 5, &cfg);
            let b = select_nm(n + 1, n + 5, &cfg);
            prop_assert!(a <= b);
            prop_assert!((4..=12).contains(&a));
        }

        #[test]
        fn local_similarity_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (desc(&mut rng, false), desc(&mut rng, false));
            let cfg = MatchConfig::default();
            let ab = local_similarity(&a, &b, &cfg).unwrap();
            let ba = local_similarity(&b, &a, &cfg).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn shrinking_overlap_never_raises_factor(seed in any::<u64>(), cut in 0usize..64) {
            // identical features, intersections nested by zeroing cells
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f: Vec<f64> = (0..768).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let big: Vec<f64> = (0..64).map(|_| if rng.gen_bool(0.8) { 1.0 } else { 0.0 }).collect();
            let mut small = big.clone();
            for v in small.iter_mut().take(cut) {
                *v = 0.0;
            }
            let cfg = MatchConfig::default();
            let s = |h: &[f64]| {
                let d = assemble_dmd(&f[..384], &f[384..], h, anchor()).unwrap();
                local_similarity(&d, &d, &cfg).unwrap()
            };
            let (sb, ss) = (s(&big), s(&small));
            prop_assert!(ss <= sb + 1e-12);
            let count = |h: &[f64]| {
                let m: [f64; 64] = h.try_into().unwrap();
                overlap_count(&overlap_bits(&m, 64), &overlap_bits(&m, 64)) as f64
            };
            if sb > 0.0 {
                prop_assert!((sb - (count(&big) / 1326.0).sqrt()).abs() < 1e-9);
            }
        }

        #[test]
        fn hungarian_at_least_greedy(r in 1usize..8, c in 1usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..r * c).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s = SimilarityMatrix::new(r, c, v.clone()).unwrap();
            let hung: f64 = lsa_hungarian(&s).iter().map(|&(i, j)| s.get(i, j)).sum();
            let mut order: Vec<usize> = (0..r * c).collect();
            order.sort_by(|&x, &y| v[y].total_cmp(&v[x]));
            let (mut ur, mut uc, mut greedy) = (vec![false; r], vec![false; c], 0.0);
            for k in order {
                let (i, j) = (k / c, k % c);
                if !ur[i] && !uc[j] {
                    ur[i] = true;
                    uc[j] = true;
                    greedy += v[k];
                }
            }
            prop_assert!(hung >= greedy - 1e-12);
        }
    }

    #[test]
    fn relax_identity_for_single_minutia() {
        let s = SimilarityMatrix::from_rows(&[vec![0.7]]).unwrap();
        let a = [Minutia::new(1.0, 2.0, 0.5)];
        let r = relax(&s, &a, &a, &MatchConfig::default()).unwrap();
        assert_eq!(r.values(), s.values());
        assert!(r.is_relaxed());
    }

    #[test]
    fn relax_preserves_uniform_matrix_with_uniform_compatibility() {
        // every minutia at the same spot and direction gives ρ = 1 for all quadruples
        let m = Minutia::new(10.0, 10.0, 1.0);
        let a = vec![m; 4];
        let s = SimilarityMatrix::new(4, 4, vec![0.5; 16]).unwrap();
        let r = relax(&s, &a, &a, &MatchConfig::default()).unwrap();
        let first = r.get(0, 0);
        assert!(r.values().iter().all(|v| (v - first).abs() < 1e-12));
    }

    /// Independent straight-line evaluation of the relaxation recurrence.
    fn naive_relax(s: &SimilarityMatrix, a: &[Minutia], b: &[Minutia], cfg: &MatchConfig) -> Vec<f64> {
        let (na, nb) = (a.len(), b.len());
        let n = na.min(nb);
        let g = |x: f64, s: f64| (-(x * x) / (2.0 * s * s)).exp();
        let radial = |p: &Minutia, q: &Minutia| angle_diff(p.theta(), (q.y() - p.y()).atan2(q.x() - p.x()));
        let mut cur = s.values().to_vec();
        for _ in 0..cfg.relax_iterations {
            let mut next = vec![0.0; na * nb];
            for i in 0..na {
                for j in 0..nb {
                    let mut sum = 0.0;
                    for k in 0..na {
                        for l in 0..nb {
                            if (k, l) == (i, j) {
                                continue;
                            }
                            let rho = g(a[i].distance(&a[k]) - b[j].distance(&b[l]), cfg.relax_sigma_dist)
                                * g(
                                    angle_diff(
                                        angle_diff(a[i].theta(), a[k].theta()),
                                        angle_diff(b[j].theta(), b[l].theta()),
                                    ),
                                    cfg.relax_sigma_dir,
                                )
                                * g(
                                    angle_diff(radial(&a[i], &a[k]), radial(&b[j], &b[l])),
                                    cfg.relax_sigma_radial,
                                );
                            sum += rho * cur[k * nb + l];
                        }
                    }
                    next[i * nb + j] =
                        cfg.relax_weight * cur[i * nb + j] + (1.0 - cfg.relax_weight) * sum / (n - 1) as f64;
                }
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn relax_matches_naive_and_rewards_consistent_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a: Vec<Minutia> = (0..12)
            .map(|_| {
                Minutia::new(
                    rng.gen_range(0.0..200.0),
                    rng.gen_range(0.0..200.0),
                    rng.gen_range(0.0..6.28),
                )
            })
            .collect();
        let t = Affine2D::rotation_about(0.6, 100.0, 100.0).then_after(&Affine2D::translation(5.0, 9.0));
        let b: Vec<Minutia> = a.iter().map(|m| m.transformed(&t)).collect();
        let s = SimilarityMatrix::new(12, 12, (0..144).map(|_| rng.gen_range(0.2..0.4)).collect()).unwrap();
        let cfg = MatchConfig::default();
        let r = relax(&s, &a, &b, &cfg).unwrap();
        let oracle = naive_relax(&s, &a, &b, &cfg);
        for (x, y) in r.values().iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-12);
        }
        let diag_gain: f64 = (0..12).map(|i| r.get(i, i) - s.get(i, i)).sum::<f64>() / 12.0;
        let off_gain: f64 = (0..12)
            .flat_map(|i| (0..12).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| r.get(i, j) - s.get(i, j))
            .sum::<f64>()
            / 132.0;
        assert!(diag_gain > off_gain);
        for i in 0..12 {
            let best_off = (0..12)
                .filter(|&j| j != i)
                .map(|j| r.get(i, j))
                .fold(f64::MIN, f64::max);
            assert!(r.get(i, i) > best_off);
        }
    }

    #[test]
    fn top_nm_mean() {
        // diagonal assignment with relaxation disabled
        let vals = [0.9, 0.8, 0.7, 0.6, 0.1];
        let mut m = vec![0.0; 25];
        for (i, v) in vals.iter().enumerate() {
            m[i * 5 + i] = *v;
        }
        let s = SimilarityMatrix::new(5, 5, m).unwrap();
        let pts: Vec<Minutia> = (0..5).map(|i| Minutia::new(i as f64 * 30.0, 0.0, 0.0)).collect();
        let cfg = MatchConfig {
            relax_iterations: 0,
            mu: -100.0,
            max_nm: 4,
            ..Default::default()
        };
        let r = score_matrix(&s, &pts, &pts, &cfg).unwrap();
        assert_eq!(r.n_m, 4);
        assert!((r.score - 0.75).abs() < 1e-12);
        // shortfall: fewer assigned pairs than n_m
        let cfg = MatchConfig {
            relax_iterations: 0,
            mu: -100.0,
            ..Default::default()
        };
        let r = score_matrix(&s, &pts, &pts, &cfg).unwrap();
        assert_eq!(r.n_m, 5);
        assert!((r.score - 0.62).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_constant_gamma() {
        let s = SimilarityMatrix::new(3, 3, vec![0.4; 9]).unwrap();
        let pts: Vec<Minutia> = (0..3).map(|i| Minutia::new(i as f64 * 40.0, 0.0, 0.0)).collect();
        let cfg = MatchConfig {
            relax_iterations: 0,
            ..Default::default()
        };
        assert!((score_matrix(&s, &pts, &pts, &cfg).unwrap().score - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_rejected() {
        let cfg = MatchConfig::default();
        assert!(match_score(&[], &[], &cfg).is_err());
        assert!(identify(&Template::Float(vec![]), &[], &cfg).is_err());
        let empty_b = SimilarityMatrix::new(3, 0, vec![]).unwrap();
        assert_eq!(empty_b.rows(), 3);
    }

    #[test]
    fn identify_single_and_tie_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d: Vec<DenseDescriptor> = (0..3).map(|_| desc(&mut rng, true)).collect();
        let t = Template::Float(d);
        let cfg = MatchConfig::default();
        let one = identify(&t, std::slice::from_ref(&t), &cfg).unwrap();
        assert_eq!(one.len(), 1);
        let ranked = identify(&t, &[t.clone(), t.clone()], &cfg).unwrap();
        assert_eq!(ranked[0].0, 0);
        assert_eq!(ranked[1].0, 1);
    }
}
