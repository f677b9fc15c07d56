use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::Template;
use crate::error::{DmdError, Result};
use crate::matcher::{match_templates, MatchConfig};
use crate::model::Affine2D;
use crate::synth::{
    apply_distortion, elliptical_crop, extract_template, simulate_plain, DistortionConfig, FingerModel, OracleConfig,
    SynthFingerprint,
};

use super::metrics::{IdentificationRun, ProbeRanking, ScoreSets};

/// Synthetic closed-set identification protocol: every finger contributes
/// one rolled-like gallery impression and one posed, distorted, cropped probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub fingers: usize,
    pub size: usize,
    pub distortion: f64,
    /// Fraction of the probe foreground kept by the crop.
    pub crop_fraction: f64,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            fingers: 50,
            size: 256,
            distortion: 8.0,
            crop_fraction: 0.6,
            max_rotation_deg: 10.0,
            max_translation: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerPair {
    pub id: String,
    pub gallery: SynthFingerprint,
    pub probe: SynthFingerprint,
}

/// Renders the gallery and probe impressions of every finger.
pub fn benchmark_fingers(cfg: &BenchmarkConfig, seed: u64) -> Result<Vec<FingerPair>> {
    if cfg.fingers == 0 {
        return Err(DmdError::Empty("benchmark"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..cfg.fingers).map(|_| rng.gen()).collect();
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = FingerModel::random(rng.gen(), cfg.size)?;
            let c = cfg.size as f64 / 2.0;
            let spread = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
            let angle = spread(&mut rng, cfg.max_rotation_deg).to_radians();
            let (tx, ty) = (
                spread(&mut rng, cfg.max_translation),
                spread(&mut rng, cfg.max_translation),
            );
            let pose = Affine2D::translation(tx, ty).then_after(&Affine2D::rotation_about(angle, c, c));
            let gallery = model.render(cfg.size, &Affine2D::identity());
            let posed = model.render(cfg.size, &pose);
            let dcfg = DistortionConfig {
                magnitude: cfg.distortion,
                grid: 4,
                seed: rng.gen(),
            };
            let distorted = apply_distortion(&posed, &dcfg)?;
            let crop = elliptical_crop(&distorted, cfg.crop_fraction, rng.gen())?;
            let probe = simulate_plain(&distorted, &crop)?;
            Ok(FingerPair {
                id: format!("f{i:03}"),
                gallery,
                probe,
            })
        })
        .collect()
}

/// Oracle templates of a benchmark, mates sharing an index.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTemplates {
    pub ids: Vec<String>,
    pub gallery: Vec<Template>,
    pub probes: Vec<Template>,
}

impl BenchmarkTemplates {
    pub fn to_binary(&self) -> Self {
        Self {
            ids: self.ids.clone(),
            gallery: self.gallery.iter().map(Template::to_binary).collect(),
            probes: self.probes.iter().map(Template::to_binary).collect(),
        }
    }
}

pub fn enroll_benchmark(fingers: &[FingerPair], oracle: &OracleConfig) -> Result<BenchmarkTemplates> {
    let gallery = fingers
        .iter()
        .map(|f| extract_template(&f.gallery, oracle))
        .collect::<Result<_>>()?;
    let probes = fingers
        .iter()
        .map(|f| extract_template(&f.probe, oracle))
        .collect::<Result<_>>()?;
    Ok(BenchmarkTemplates {
        ids: fingers.iter().map(|f| f.id.clone()).collect(),
        gallery,
        probes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub run: IdentificationRun,
    pub scores: ScoreSets,
}

#[derive(Debug, Clone, Copy)]
pub struct GalleryEntry<'a> {
    pub id: &'a str,
    pub template: &'a Template,
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeEntry<'a> {
    pub id: &'a str,
    pub mate: &'a str,
    pub template: &'a Template,
}

/// Scores every probe against the whole gallery, in parallel over probes.
/// Entries are processed in id order, so input order does not matter.
/// Comparisons involving an empty template score 0.
pub fn evaluate_protocol(
    probes: &[ProbeEntry],
    gallery: &[GalleryEntry],
    cfg: &MatchConfig,
) -> Result<BenchmarkOutcome> {
    if gallery.is_empty() {
        return Err(DmdError::Empty("gallery"));
    }
    if probes.is_empty() {
        return Err(DmdError::Empty("probes"));
    }
    let mut gallery = gallery.to_vec();
    gallery.sort_by(|a, b| a.id.cmp(b.id));
    let mut probes = probes.to_vec();
    probes.sort_by(|a, b| a.id.cmp(b.id));
    if gallery.windows(2).any(|w| w[0].id == w[1].id) || probes.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(DmdError::InvalidArgument("duplicate id in protocol".into()));
    }
    if let Some(p) = probes
        .iter()
        .find(|p| gallery.binary_search_by(|g| g.id.cmp(p.mate)).is_err())
    {
        return Err(DmdError::InvalidArgument(format!(
            "mate {} of probe {} not in gallery",
            p.mate, p.id
        )));
    }
    let rows: Vec<Vec<f64>> = probes
        .par_iter()
        .map(|p| {
            gallery
                .iter()
                .map(|g| match match_templates(p.template, g.template, cfg) {
                    Ok(r) => Ok(r.score),
                    Err(DmdError::Empty(_)) => Ok(0.0),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut scores = ScoreSets::default();
    let mut ranked_probes = Vec::with_capacity(rows.len());
    for (p, row) in probes.iter().zip(&rows) {
        for (g, &s) in gallery.iter().zip(row) {
            if g.id == p.mate {
                scores.genuine.push(s);
            } else {
                scores.impostor.push(s);
            }
        }
        let mut ranked: Vec<(String, f64)> = gallery
            .iter()
            .map(|g| g.id.to_string())
            .zip(row.iter().copied())
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked_probes.push(ProbeRanking {
            probe: p.id.to_string(),
            mate: p.mate.to_string(),
            ranked,
        });
    }
    Ok(BenchmarkOutcome {
        run: IdentificationRun { probes: ranked_probes },
        scores,
    })
}

/// Runs the closed-set protocol of a benchmark; probe `i` mates gallery `i`.
pub fn run_identification(t: &BenchmarkTemplates, cfg: &MatchConfig) -> Result<BenchmarkOutcome> {
    if t.probes.len() != t.gallery.len() || t.ids.len() != t.gallery.len() {
        return Err(DmdError::InvalidArgument(
            "benchmark needs one probe per gallery entry".into(),
        ));
    }
    let probe_ids: Vec<String> = t.ids.iter().map(|id| format!("{id}_probe")).collect();
    let gallery: Vec<GalleryEntry> = t
        .ids
        .iter()
        .zip(&t.gallery)
        .map(|(id, template)| GalleryEntry { id, template })
        .collect();
    let probes: Vec<ProbeEntry> = probe_ids
        .iter()
        .zip(&t.ids)
        .zip(&t.probes)
        .map(|((id, mate), template)| ProbeEntry { id, mate, template })
        .collect();
    evaluate_protocol(&probes, &gallery, cfg)
}
