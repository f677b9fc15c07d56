//! Training objectives with analytic gradients and a finite-difference
//! checker.

use serde::{Deserialize, Serialize};

use crate::descriptor::CELLS;
use crate::error::{DmdError, Result};
use crate::minutiae_map::MinutiaeMap;

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// CosFace scale.
    pub scale: f64,
    /// CosFace additive cosine margin.
    pub margin: f64,
    pub lambda_seg: f64,
    pub lambda_mnt: f64,
    pub lambda_sim: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            scale: 30.0,
            margin: 0.4,
            lambda_seg: 1.0,
            lambda_mnt: 0.01,
            lambda_sim: 0.00125,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.scale > 0.0
            && (0.0..1.0).contains(&self.margin)
            && self.lambda_seg >= 0.0
            && self.lambda_mnt >= 0.0
            && self.lambda_sim >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(DmdError::Config("invalid loss configuration".into()))
        }
    }
}

/// Class weight vectors, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    dim: usize,
    rows: Vec<f64>,
}

impl ClassifierWeights {
    pub fn new(classes: usize, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if classes == 0 || dim == 0 || rows.len() != classes * dim {
            return Err(DmdError::ShapeMismatch(format!(
                "{classes} classes of dimension {dim} need {} weights, got {}",
                classes * dim,
                rows.len()
            )));
        }
        Ok(Self { dim, rows })
    }

    pub fn classes(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.rows[v * self.dim..(v + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rows
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient through `x / ‖x‖` given the gradient with respect to the unit vector.
fn through_normalization(g_unit: &[f64], unit: &[f64], len: f64) -> Vec<f64> {
    let proj = dot(g_unit, unit);
    g_unit.iter().zip(unit).map(|(g, u)| (g - proj * u) / len).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosFaceGrad {
    pub loss: f64,
    /// Flattened `N × D`, same layout as the input features.
    pub d_features: Vec<f64>,
    /// Flattened `V × D`.
    pub d_weights: Vec<f64>,
}

/// Large-margin cosine loss averaged over the batch, with gradients.
/// `features` is a flattened `N × D` batch.
pub fn cosface_loss_grad(
    features: &[f64],
    labels: &[usize],
    w: &ClassifierWeights,
    cfg: &LossConfig,
) -> Result<CosFaceGrad> {
    let d = w.dim();
    let v_count = w.classes();
    if labels.is_empty() || features.len() != labels.len() * d {
        return Err(DmdError::ShapeMismatch(format!(
            "{} labels need {} feature values of dimension {d}, got {}",
            labels.len(),
            labels.len() * d,
            features.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= v_count) {
        return Err(DmdError::InvalidArgument(format!(
            "label {bad} out of range for {v_count} classes"
        )));
    }
    let w_norms: Vec<f64> = (0..v_count).map(|v| norm(w.row(v))).collect();
    if w_norms.iter().any(|&n| n < 1e-12) {
        return Err(DmdError::InvalidArgument("zero-norm class weight".into()));
    }
    let w_unit: Vec<Vec<f64>> = (0..v_count)
        .map(|v| w.row(v).iter().map(|x| x / w_norms[v]).collect())
        .collect();
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut d_features = vec![0.0; features.len()];
    let mut g_wunit = vec![vec![0.0; d]; v_count];

    for (s, &y) in labels.iter().enumerate() {
        let f = &features[s * d..(s + 1) * d];
        let f_len = norm(f);
        if f_len < 1e-12 {
            return Err(DmdError::InvalidArgument(format!(
                "zero-norm feature at batch index {s}"
            )));
        }
        let x: Vec<f64> = f.iter().map(|v| v / f_len).collect();
        let cos: Vec<f64> = w_unit.iter().map(|wv| dot(&x, wv)).collect();
        let z: Vec<f64> = cos
            .iter()
            .enumerate()
            .map(|(v, c)| cfg.scale * (c - if v == y { cfg.margin } else { 0.0 }))
            .collect();
        let top = (0..v_count).fold(0, |b, v| if z[v] > z[b] { v } else { b });
        let zmax = z[top];
        // ln Σ exp(z − zmax) = ln(1 + rest); ln_1p keeps tiny losses exact
        let rest: f64 = (0..v_count).filter(|&v| v != top).map(|v| (z[v] - zmax).exp()).sum();
        let lse = zmax + rest.ln_1p();
        loss += (zmax - z[y]) + rest.ln_1p();

        // dL/dcos_v = A (p_v − [v = y]) / N
        let mut g_x = vec![0.0; d];
        for v in 0..v_count {
            let p = (z[v] - lse).exp();
            let g = cfg.scale * (p - if v == y { 1.0 } else { 0.0 }) / n;
            for k in 0..d {
                g_x[k] += g * w_unit[v][k];
                g_wunit[v][k] += g * x[k];
            }
        }
        let g_f = through_normalization(&g_x, &x, f_len);
        d_features[s * d..(s + 1) * d].copy_from_slice(&g_f);
    }
    let d_weights = (0..v_count)
        .flat_map(|v| through_normalization(&g_wunit[v], &w_unit[v], w_norms[v]))
        .collect();
    Ok(CosFaceGrad {
        loss: loss / n,
        d_features,
        d_weights,
    })
}

pub fn cosface_loss(features: &[f64], labels: &[usize], w: &ClassifierWeights, cfg: &LossConfig) -> Result<f64> {
    cosface_loss_grad(features, labels, w, cfg).map(|g| g.loss)
}

fn overlap_cells(overlap: &[bool]) -> Result<usize> {
    if overlap.len() != CELLS {
        return Err(DmdError::ShapeMismatch(format!("overlap needs {CELLS} cells")));
    }
    match overlap.iter().filter(|&&b| b).count() {
        0 => Err(DmdError::Empty("overlap")),
        k => Ok(k),
    }
}

fn check_descriptor_pair(f_p: &[f64], f_r: &[f64]) -> Result<()> {
    if f_p.len() != f_r.len() || f_p.is_empty() || f_p.len() % CELLS != 0 {
        return Err(DmdError::ShapeMismatch("descriptor tensors differ in shape".into()));
    }
    Ok(())
}

/// Mean over overlapping cells of the squared channel-vector distance.
/// Tensors are flattened `channels × 8 × 8`.
pub fn similarity_loss(f_p: &[f64], f_r: &[f64], overlap: &[bool]) -> Result<f64> {
    check_descriptor_pair(f_p, f_r)?;
    let k = overlap_cells(overlap)?;
    let sum: f64 = f_p
        .iter()
        .zip(f_r)
        .enumerate()
        .filter(|(i, _)| overlap[i % CELLS])
        .map(|(_, (a, b))| (a - b) * (a - b))
        .sum();
    Ok(sum / k as f64)
}

/// Gradients of [`similarity_loss`] with respect to `f_p` and `f_r`.
pub fn similarity_loss_grad(f_p: &[f64], f_r: &[f64], overlap: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_descriptor_pair(f_p, f_r)?;
    let k = overlap_cells(overlap)? as f64;
    let gp: Vec<f64> = f_p
        .iter()
        .zip(f_r)
        .enumerate()
        .map(|(i, (a, b))| if overlap[i % CELLS] { 2.0 * (a - b) / k } else { 0.0 })
        .collect();
    let gr = gp.iter().map(|g| -g).collect();
    Ok((gp, gr))
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(DmdError::ShapeMismatch(format!(
            "lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 − 1e-7]`.
pub fn segmentation_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_same_len(pred, target)?;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn segmentation_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_same_len(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            if p < BCE_CLAMP || p > 1.0 - BCE_CLAMP {
                0.0
            } else {
                (-t / p + (1.0 - t) / (1.0 - p)) / n
            }
        })
        .collect())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_same_len(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_same_len(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

/// Mean squared error over all heatmap cells.
pub fn minutiae_loss(pred: &MinutiaeMap, target: &MinutiaeMap) -> Result<f64> {
    mse(pred.values(), target.values())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub cls_texture: f64,
    pub cls_minutia: f64,
    pub seg: f64,
    pub mnt: f64,
    pub sim: f64,
}

/// Weighted sum of the five training terms.
pub fn total_loss(c: &LossComponents, cfg: &LossConfig) -> Result<f64> {
    let parts = [c.cls_texture, c.cls_minutia, c.seg, c.mnt, c.sim];
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(DmdError::NonFiniteLoss);
    }
    Ok(c.cls_texture + c.cls_minutia + cfg.lambda_seg * c.seg + cfg.lambda_mnt * c.mnt + cfg.lambda_sim * c.sim)
}

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Relative disagreement between analytic and central-difference gradients.
///
/// Per coordinate the error is `|g − ĝ| / max(|g|, |ĝ|, floor)` where the
/// floor is `1e-3 · max(‖g‖∞, 1e-6)`, so coordinates whose true derivative is
/// negligible next to the largest one are judged on an absolute scale.
/// Returns the maximum over `coords` (all coordinates when `None`).
pub fn finite_diff_check_coords(f: &dyn Objective, point: &[f64], eps: f64, coords: Option<&[usize]>) -> Result<f64> {
    if !(eps > 1e-7 && eps < 1e-3) {
        return Err(DmdError::InvalidArgument("eps must lie in (1e-7, 1e-3)".into()));
    }
    let g = f.gradient(point)?;
    if g.len() != point.len() {
        return Err(DmdError::ShapeMismatch("gradient length differs from point".into()));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
    let floor = 1e-3 * scale;
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f.value(&x)?;
        x[i] = orig - eps;
        let down = f.value(&x)?;
        x[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(DmdError::NonFiniteLoss);
        }
        let numeric = (up - down) / (2.0 * eps);
        let err = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn finite_diff_check(f: &dyn Objective, point: &[f64], eps: f64) -> Result<f64> {
    finite_diff_check_coords(f, point, eps, None)
}

/// CosFace as a function of `[features (N×D) | weights (V×D)]`.
pub struct CosFaceObjective {
    pub labels: Vec<usize>,
    pub classes: usize,
    pub dim: usize,
    pub cfg: LossConfig,
}

impl CosFaceObjective {
    fn split<'a>(&self, x: &'a [f64]) -> Result<(&'a [f64], ClassifierWeights)> {
        let nf = self.labels.len() * self.dim;
        if x.len() != nf + self.classes * self.dim {
            return Err(DmdError::ShapeMismatch(
                "cosface parameter vector has the wrong length".into(),
            ));
        }
        Ok((
            &x[..nf],
            ClassifierWeights::new(self.classes, self.dim, x[nf..].to_vec())?,
        ))
    }
}

impl Objective for CosFaceObjective {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let (f, w) = self.split(x)?;
        cosface_loss(f, &self.labels, &w, &self.cfg)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (f, w) = self.split(x)?;
        let g = cosface_loss_grad(f, &self.labels, &w, &self.cfg)?;
        Ok([g.d_features, g.d_weights].concat())
    }
}

/// Similarity loss as a function of `[f_p | f_r]`.
pub struct SimilarityObjective {
    pub overlap: Vec<bool>,
}

impl Objective for SimilarityObjective {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let (p, r) = x.split_at(x.len() / 2);
        similarity_loss(p, r, &self.overlap)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (p, r) = x.split_at(x.len() / 2);
        let (gp, gr) = similarity_loss_grad(p, r, &self.overlap)?;
        Ok([gp, gr].concat())
    }
}

pub struct SegmentationObjective {
    pub target: Vec<f64>,
}

impl Objective for SegmentationObjective {
    fn value(&self, x: &[f64]) -> Result<f64> {
        segmentation_loss(x, &self.target)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        segmentation_loss_grad(x, &self.target)
    }
}

pub struct MseObjective {
    pub target: Vec<f64>,
}

impl Objective for MseObjective {
    fn value(&self, x: &[f64]) -> Result<f64> {
        mse(x, &self.target)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        mse_grad(x, &self.target)
    }
}

/// Full weighted objective over one batch. The parameter vector is the
/// concatenation of texture-branch cosface parameters, minutia-branch
/// cosface parameters, segmentation prediction, minutiae-map prediction and
/// the `[f_p | f_r]` descriptor pair, in that order.
pub struct TotalObjective {
    pub texture: CosFaceObjective,
    pub minutia: CosFaceObjective,
    pub seg: SegmentationObjective,
    pub mnt: MseObjective,
    pub sim: SimilarityObjective,
    /// Length of each descriptor in the similarity pair.
    pub descriptor_len: usize,
    pub cfg: LossConfig,
}

impl TotalObjective {
    fn lengths(&self) -> [usize; 5] {
        let cf = |o: &CosFaceObjective| (o.labels.len() + o.classes) * o.dim;
        [
            cf(&self.texture),
            cf(&self.minutia),
            self.seg.target.len(),
            self.mnt.target.len(),
            2 * self.descriptor_len,
        ]
    }

    pub fn param_len(&self) -> usize {
        self.lengths().iter().sum()
    }

    fn split<'a>(&self, x: &'a [f64]) -> Result<Vec<&'a [f64]>> {
        if x.len() != self.param_len() {
            return Err(DmdError::ShapeMismatch(
                "total-loss parameter vector has the wrong length".into(),
            ));
        }
        let mut parts = Vec::with_capacity(5);
        let mut rest = x;
        for len in self.lengths() {
            let (head, tail) = rest.split_at(len);
            parts.push(head);
            rest = tail;
        }
        Ok(parts)
    }
}

impl Objective for TotalObjective {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let p = self.split(x)?;
        let c = LossComponents {
            cls_texture: self.texture.value(p[0])?,
            cls_minutia: self.minutia.value(p[1])?,
            seg: self.seg.value(p[2])?,
            mnt: self.mnt.value(p[3])?,
            sim: self.sim.value(p[4])?,
        };
        total_loss(&c, &self.cfg)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.split(x)?;
        let scale = |g: Vec<f64>, k: f64| g.into_iter().map(move |v| v * k);
        let mut out = Vec::with_capacity(x.len());
        out.extend(self.texture.gradient(p[0])?);
        out.extend(self.minutia.gradient(p[1])?);
        out.extend(scale(self.seg.gradient(p[2])?, self.cfg.lambda_seg));
        out.extend(scale(self.mnt.gradient(p[3])?, self.cfg.lambda_mnt));
        out.extend(scale(self.sim.gradient(p[4])?, self.cfg.lambda_sim));
        Ok(out)
    }
}
