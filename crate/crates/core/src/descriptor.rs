//! Dense minutia descriptors: assembly, binarization and template files.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};
use crate::model::Minutia;

/// Spatial side of the descriptor grid.
pub const GRID: usize = 8;
pub const CELLS: usize = GRID * GRID;
pub const DEFAULT_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    /// Channel depth of each branch; the descriptor has twice as many.
    pub channels: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            channels: DEFAULT_CHANNELS,
        }
    }
}

/// Feature volume of shape `2C × 8 × 8`, flattened channel-major, then row,
/// then column (`c·64 + r·8 + col`). Features are stored already multiplied
/// by the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDescriptor {
    channels: usize,
    features: Vec<f32>,
    mask: [f32; CELLS],
    anchor: Minutia,
}

fn check_mask(h: &[f64]) -> Result<()> {
    if h.len() != CELLS {
        return Err(DmdError::ShapeMismatch(format!(
            "mask needs {CELLS} cells, got {}",
            h.len()
        )));
    }
    if h.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(DmdError::InvalidArgument("mask values must lie in [0,1]".into()));
    }
    Ok(())
}

/// Concatenates texture and minutia branches along channels and multiplies
/// every channel by the segmentation map `h`.
pub fn assemble_dmd(f_t: &[f64], f_m: &[f64], h: &[f64], anchor: Minutia) -> Result<DenseDescriptor> {
    if f_t.len() != f_m.len() || f_t.is_empty() || f_t.len() % CELLS != 0 {
        return Err(DmdError::ShapeMismatch(format!(
            "branch sizes {} and {} are not equal multiples of {CELLS}",
            f_t.len(),
            f_m.len()
        )));
    }
    check_mask(h)?;
    let channels = f_t.len() / CELLS;
    let features = f_t
        .chunks_exact(CELLS)
        .chain(f_m.chunks_exact(CELLS))
        .flat_map(|ch| ch.iter().zip(h).map(|(v, w)| (v * w) as f32))
        .collect();
    let mut mask = [0f32; CELLS];
    for (m, v) in mask.iter_mut().zip(h) {
        *m = *v as f32;
    }
    Ok(DenseDescriptor {
        channels,
        features,
        mask,
        anchor,
    })
}

impl DenseDescriptor {
    /// Rebuilds a descriptor from stored parts, e.g. a template file.
    pub fn from_parts(channels: usize, features: Vec<f32>, mask: [f32; CELLS], anchor: Minutia) -> Result<Self> {
        if channels == 0 || features.len() != 2 * channels * CELLS {
            return Err(DmdError::ShapeMismatch(format!(
                "expected {} features for C={channels}, got {}",
                2 * channels * CELLS,
                features.len()
            )));
        }
        if mask.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DmdError::Format("mask values must lie in [0,1]".into()));
        }
        for (i, v) in features.iter().enumerate() {
            if !v.is_finite() || (mask[i % CELLS] == 0.0 && *v != 0.0) {
                return Err(DmdError::Format(format!("feature {i} is inconsistent with the mask")));
            }
        }
        Ok(Self {
            channels,
            features,
            mask,
            anchor,
        })
    }

    /// Channel depth per branch (`C`).
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn mask(&self) -> &[f32; CELLS] {
        &self.mask
    }

    pub fn anchor(&self) -> &Minutia {
        &self.anchor
    }

    pub fn feature(&self, c: usize, r: usize, col: usize) -> f32 {
        self.features[c * CELLS + r * GRID + col]
    }

    pub fn binarize(&self) -> BinaryDescriptor {
        binarize(self)
    }
}

/// Sign code of a descriptor: one bit per feature (`value >= 0`) and one
/// bit per mask cell (`value >= 0.5`). Each of the `2C` channels fills
/// exactly one 64-bit word, bit `r·8 + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDescriptor {
    feature_bits: Vec<u64>,
    mask_bits: u64,
    anchor: Minutia,
}

pub fn binarize(d: &DenseDescriptor) -> BinaryDescriptor {
    let feature_bits = d
        .features
        .chunks_exact(CELLS)
        .map(|ch| {
            ch.iter()
                .enumerate()
                .fold(0u64, |w, (i, v)| if *v >= 0.0 { w | (1 << i) } else { w })
        })
        .collect();
    let mask_bits = d
        .mask
        .iter()
        .enumerate()
        .fold(0u64, |w, (i, v)| if *v >= 0.5 { w | (1 << i) } else { w });
    BinaryDescriptor {
        feature_bits,
        mask_bits,
        anchor: d.anchor,
    }
}

impl BinaryDescriptor {
    pub fn from_parts(channels: usize, feature_bits: Vec<u64>, mask_bits: u64, anchor: Minutia) -> Result<Self> {
        if channels == 0 || feature_bits.len() != 2 * channels {
            return Err(DmdError::ShapeMismatch(format!(
                "expected {} feature words for C={channels}, got {}",
                2 * channels,
                feature_bits.len()
            )));
        }
        Ok(Self {
            feature_bits,
            mask_bits,
            anchor,
        })
    }

    pub fn channels(&self) -> usize {
        self.feature_bits.len() / 2
    }

    pub fn feature_words(&self) -> &[u64] {
        &self.feature_bits
    }

    pub fn mask_bits(&self) -> u64 {
        self.mask_bits
    }

    pub fn anchor(&self) -> &Minutia {
        &self.anchor
    }

    pub fn feature_bit(&self, c: usize, r: usize, col: usize) -> bool {
        self.feature_bits[c] >> (r * GRID + col) & 1 == 1
    }

    /// Feature payload packed LSB-first in flattening order.
    pub fn feature_bytes(&self) -> Vec<u8> {
        self.feature_bits.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    /// Mask as 0/1 values, for overlap computation.
    pub fn mask_values(&self) -> [f64; CELLS] {
        let mut out = [0.0; CELLS];
        for (i, v) in out.iter_mut().enumerate() {
            *v = (self.mask_bits >> i & 1) as f64;
        }
        out
    }
}

/// Bilinear upsampling of an 8×8 mask onto a `grid × grid` lattice with
/// pixel-centered alignment and edge clamping; returns the cells whose value
/// is at least 0.5 as a packed bitset (row-major, LSB-first).
pub fn overlap_bits(mask: &[f64; CELLS], grid: usize) -> Vec<u64> {
    let mut bits = vec![0u64; (grid * grid).div_ceil(64)];
    let scale = GRID as f64 / grid as f64;
    let coord = |f: usize| {
        let s = ((f as f64 + 0.5) * scale - 0.5).clamp(0.0, (GRID - 1) as f64);
        let i0 = (s.floor() as usize).min(GRID - 2);
        (i0, s - i0 as f64)
    };
    let axis: Vec<(usize, f64)> = (0..grid).map(coord).collect();
    for (fy, &(y0, ty)) in axis.iter().enumerate() {
        for (fx, &(x0, tx)) in axis.iter().enumerate() {
            let m = |x: usize, y: usize| mask[y * GRID + x];
            let top = m(x0, y0) * (1.0 - tx) + m(x0 + 1, y0) * tx;
            let bot = m(x0, y0 + 1) * (1.0 - tx) + m(x0 + 1, y0 + 1) * tx;
            if top * (1.0 - ty) + bot * ty >= 0.5 {
                let k = fy * grid + fx;
                bits[k / 64] |= 1 << (k % 64);
            }
        }
    }
    bits
}

pub fn overlap_count(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

const MAGIC: &[u8; 4] = b"DMD1";

/// A fingerprint template: one descriptor per minutia, in either form.
#[derive(Debug, Clone, PartialEq)]
pub enum Template {
    Float(Vec<DenseDescriptor>),
    Binary(Vec<BinaryDescriptor>),
}

impl Template {
    pub fn len(&self) -> usize {
        match self {
            Template::Float(v) => v.len(),
            Template::Binary(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Template::Binary(_))
    }

    pub fn anchors(&self) -> Vec<Minutia> {
        match self {
            Template::Float(v) => v.iter().map(|d| d.anchor).collect(),
            Template::Binary(v) => v.iter().map(|d| d.anchor).collect(),
        }
    }

    pub fn to_binary(&self) -> Template {
        match self {
            Template::Float(v) => Template::Binary(v.iter().map(binarize).collect()),
            Template::Binary(_) => self.clone(),
        }
    }

    fn channels(&self) -> Result<usize> {
        let cs: Vec<usize> = match self {
            Template::Float(v) => v.iter().map(|d| d.channels).collect(),
            Template::Binary(v) => v.iter().map(|d| d.channels()).collect(),
        };
        let c = cs.first().copied().unwrap_or(DEFAULT_CHANNELS);
        if cs.iter().any(|&x| x != c) {
            return Err(DmdError::ShapeMismatch("template mixes channel depths".into()));
        }
        if c > u8::MAX as usize {
            return Err(DmdError::Format(format!("channel depth {c} does not fit the header")));
        }
        Ok(c)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let c = self.channels()?;
        w.write_all(MAGIC)?;
        w.write_all(&[u8::from(self.is_binary()), c as u8])?;
        w.write_all(&0u16.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        let anchor = |w: &mut dyn Write, m: &Minutia| -> Result<()> {
            for v in [m.x(), m.y(), m.theta()] {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
            Ok(())
        };
        match self {
            Template::Float(ds) => {
                for d in ds {
                    anchor(w, &d.anchor)?;
                    for v in d.features.iter().chain(&d.mask) {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
            Template::Binary(ds) => {
                for d in ds {
                    anchor(w, &d.anchor)?;
                    w.write_all(&d.feature_bytes())?;
                    w.write_all(&d.mask_bits.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Template> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(DmdError::Format("bad magic".into()));
        }
        let format = head[4];
        let c = head[5] as usize;
        if c == 0 {
            return Err(DmdError::Format("channel depth must be positive".into()));
        }
        let count = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let f32s = |r: &mut dyn Read, n: usize| -> Result<Vec<f32>> {
            let mut buf = vec![0u8; 4 * n];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect())
        };
        let read_anchor = |v: &[f32]| Minutia::try_new(v[0] as f64, v[1] as f64, v[2] as f64);
        match format {
            0 => {
                let mut out = Vec::with_capacity(count.min(1 << 16));
                for _ in 0..count {
                    let a = read_anchor(&f32s(r, 3)?)?;
                    let features = f32s(r, 2 * c * CELLS)?;
                    let mask: [f32; CELLS] = f32s(r, CELLS)?.try_into().unwrap();
                    out.push(DenseDescriptor::from_parts(c, features, mask, a)?);
                }
                Ok(Template::Float(out))
            }
            1 => {
                let mut out = Vec::with_capacity(count.min(1 << 16));
                for _ in 0..count {
                    let a = read_anchor(&f32s(r, 3)?)?;
                    let mut buf = vec![0u8; 2 * c * 8 + 8];
                    r.read_exact(&mut buf)?;
                    let words: Vec<u64> = buf
                        .chunks_exact(8)
                        .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                        .collect();
                    let (feat, mask) = words.split_at(2 * c);
                    out.push(BinaryDescriptor::from_parts(c, feat.to_vec(), mask[0], a)?);
                }
                Ok(Template::Binary(out))
            }
            f => Err(DmdError::Format(format!("unknown payload format {f}"))),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Template> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Template::read_from(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn anchor() -> Minutia {
        Minutia::new(10.5, 20.25, 1.0)
    }

    #[test]
    fn zero_mask_annihilates() {
        let f: Vec<f64> = (0..384).map(|i| i as f64 - 100.0).collect();
        let d = assemble_dmd(&f, &f, &[0.0; 64], anchor()).unwrap();
        assert!(d.features().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_mask_is_concatenation() {
        let ft: Vec<f64> = (0..384).map(|i| (i as f64) * 0.5).collect();
        let fm: Vec<f64> = (0..384).map(|i| -(i as f64)).collect();
        let d = assemble_dmd(&ft, &fm, &[1.0; 64], anchor()).unwrap();
        let cat: Vec<f32> = ft.iter().chain(&fm).map(|&v| v as f32).collect();
        assert_eq!(d.features(), &cat[..]);
        assert_eq!(d.channels(), 6);
    }

    #[test]
    fn single_cell_mask() {
        let ones = vec![1.0; 384];
        let mut h = [0.0; 64];
        h[0] = 1.0;
        let d = assemble_dmd(&ones, &ones, &h, anchor()).unwrap();
        for c in 0..12 {
            for r in 0..8 {
                for col in 0..8 {
                    let want = if r == 0 && col == 0 { 1.0 } else { 0.0 };
                    assert_eq!(d.feature(c, r, col), want);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let a = vec![0.0; 384];
        assert!(assemble_dmd(&a, &a[..320], &[1.0; 64], anchor()).is_err());
        assert!(assemble_dmd(&a, &a, &[1.0; 63], anchor()).is_err());
        assert!(assemble_dmd(&a[..10], &a[..10], &[1.0; 64], anchor()).is_err());
    }

    #[test]
    fn binary_payload_is_96_bytes() {
        let a = vec![0.3; 384];
        let d = assemble_dmd(&a, &a, &[1.0; 64], anchor()).unwrap();
        assert_eq!(d.binarize().feature_bytes().len(), 96);
    }

    #[test]
    fn threshold_boundaries() {
        let mut ft = vec![-1.0; 64];
        ft[5] = 0.0;
        let mut h = [1.0; 64];
        h[1] = 0.5;
        h[2] = 0.4999;
        let b = assemble_dmd(&ft, &ft, &h, anchor()).unwrap().binarize();
        assert!(b.feature_bit(0, 0, 5));
        assert!(!b.feature_bit(0, 0, 4));
        assert_eq!(b.mask_bits() >> 1 & 1, 1);
        assert_eq!(b.mask_bits() >> 2 & 1, 0);
    }

    #[test]
    fn packing_is_lsb_first_in_flattening_order() {
        // independent packing: walk the flat index and set byte bits directly
        let ft: Vec<f64> = (0..384).map(|i| if (i * 7) % 5 < 2 { 1.0 } else { -1.0 }).collect();
        let fm: Vec<f64> = (0..384).map(|i| if (i * 3) % 4 == 0 { 1.0 } else { -1.0 }).collect();
        let d = assemble_dmd(&ft, &fm, &[1.0; 64], anchor()).unwrap();
        let mut want = vec![0u8; 96];
        for (k, v) in ft.iter().chain(&fm).enumerate() {
            if *v >= 0.0 {
                want[k / 8] |= 1 << (k % 8);
            }
        }
        assert_eq!(d.binarize().feature_bytes(), want);
    }

    #[test]
    fn full_mask_overlap_fills_grid() {
        assert_eq!(
            overlap_count(&overlap_bits(&[1.0; 64], 64), &overlap_bits(&[1.0; 64], 64)),
            4096
        );
        assert_eq!(
            overlap_bits(&[0.0; 64], 64).iter().map(|w| w.count_ones()).sum::<u32>(),
            0
        );
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes: &[u8] = b"XXXX\0\x06\0\0\0\0\0\0";
        assert!(matches!(Template::read_from(&mut bytes), Err(DmdError::Format(_))));
    }

    fn random_descriptor(seed: u64, c: usize) -> DenseDescriptor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let ft: Vec<f64> = (0..c * 64).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fm: Vec<f64> = (0..c * 64).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h: Vec<f64> = (0..64)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(0.0..=1.0)
                }
            })
            .collect();
        let a = Minutia::new(
            rng.gen_range(0.0..500.0),
            rng.gen_range(0.0..500.0),
            rng.gen_range(0.0..6.2),
        );
        assemble_dmd(&ft, &fm, &h, a).unwrap()
    }

    proptest! {
        #[test]
        fn template_roundtrip_is_bit_exact(seed in any::<u64>(), n in 0usize..6, c in 1usize..8) {
            let ds: Vec<DenseDescriptor> = (0..n).map(|i| random_descriptor(seed.wrapping_add(i as u64), c)).collect();
            // anchors are stored as f32; compare after one pass through the file
            for t in [Template::Float(ds.clone()), Template::Float(ds).to_binary()] {
                let mut buf = Vec::new();
                t.write_to(&mut buf).unwrap();
                let back = Template::read_from(&mut &buf[..]).unwrap();
                let mut buf2 = Vec::new();
                back.write_to(&mut buf2).unwrap();
                prop_assert_eq!(&buf, &buf2);
                let expected_len = 12 + n * (12 + if t.is_binary() { 16 * c + 8 } else { 4 * (2 * c * 64 + 64) });
                prop_assert_eq!(buf.len(), expected_len);
                match (&t, &back) {
                    (Template::Float(a), Template::Float(b)) => for (x, y) in a.iter().zip(b) {
                        prop_assert!(x.features().iter().zip(y.features()).all(|(p, q)| p.to_bits() == q.to_bits()));
                        prop_assert!(x.mask().iter().zip(y.mask()).all(|(p, q)| p.to_bits() == q.to_bits()));
                    },
                    (Template::Binary(a), Template::Binary(b)) => for (x, y) in a.iter().zip(b) {
                        prop_assert_eq!(x.feature_words(), y.feature_words());
                        prop_assert_eq!(x.mask_bits(), y.mask_bits());
                    },
                    _ => prop_assert!(false),
                }
            }
        }

        #[test]
        fn assembly_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
            let x = random_descriptor(seed, 6);
            let y = random_descriptor(seed ^ 0xabcdef, 6);
            let h: Vec<f64> = x.mask().iter().map(|&v| v as f64).collect();
            // recover raw branches on the unmasked support, zero elsewhere
            let raw = |d: &DenseDescriptor| -> Vec<f64> { d.features().iter().map(|&v| v as f64).collect() };
            let (rx, ry) = (raw(&x), raw(&y));
            let comb: Vec<f64> = rx.iter().zip(&ry).map(|(p, q)| a * p + b * q).collect();
            let d = assemble_dmd(&comb[..384], &comb[384..], &h, *x.anchor()).unwrap();
            let dx = assemble_dmd(&rx[..384], &rx[384..], &h, *x.anchor()).unwrap();
            let dy = assemble_dmd(&ry[..384], &ry[384..], &h, *x.anchor()).unwrap();
            for i in 0..768 {
                let lin = a * dx.features()[i] as f64 + b * dy.features()[i] as f64;
                prop_assert!((d.features()[i] as f64 - lin).abs() < 1e-5 * (1.0 + lin.abs()));
            }
        }

        #[test]
        fn binarize_commutes_with_sign_on_full_mask(raw in prop::collection::vec(-10.0f32..10.0, 768)) {
            let r: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
            let b = assemble_dmd(&r[..384], &r[384..], &[1.0; 64], anchor()).unwrap().binarize();
            for (k, v) in raw.iter().enumerate() {
                prop_assert_eq!(b.feature_bit(k / 64, (k % 64) / 8, k % 8), *v >= 0.0);
            }
            prop_assert_eq!(b.mask_bits(), u64::MAX);
        }
    }
}
