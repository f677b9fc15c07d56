use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dmd::config::RunConfig;
use dmd::descriptor::Template;
use dmd::eval::{
    benchmark_fingers, enroll_benchmark, evaluate_protocol, rank1, run_identification, write_outputs,
    write_ranking_csv, GalleryEntry, ProbeEntry, Summary,
};
use dmd::matcher::{match_templates, MatchConfig};
use dmd::model::{GrayImage, MinutiaSet, SegMask};
use dmd::synth::{extract_template, extract_template_from_image, CropSpec, DistortionConfig, SynthRecord};
use dmd::traingen::{generate_patch_pairs, select_batch, write_patch_pairs, Impression};

use crate::output::Outputs;

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub size: usize,
    pub entries: Vec<SynthEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthEntry {
    pub id: String,
    pub image: String,
    pub minutiae: String,
    pub mask: String,
    pub record: String,
    pub minutiae_count: usize,
}

pub fn synth(cfg: &RunConfig, count: usize, out: &Path, distort: bool, crop: Option<f64>) -> Result<()> {
    if let Some(f) = crop {
        ensure!(f > 0.0 && f <= 1.0, "--crop must lie in (0, 1]");
    }
    let records: Vec<SynthRecord> = (0..count)
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            SynthRecord {
                id: format!("fp{i:04}"),
                seed,
                size: cfg.synth_size,
                distortion: distort.then(|| DistortionConfig {
                    seed: cfg.distortion.seed.wrapping_add(seed),
                    ..cfg.distortion
                }),
                crop: crop.map(|fraction| CropSpec { fraction, seed }),
            }
        })
        .collect();
    let rendered = records
        .par_iter()
        .map(|r| r.render().with_context(|| format!("rendering {}", r.id)))
        .collect::<Result<Vec<_>>>()?;

    let mut outputs = Outputs::new();
    outputs.dir(out)?;
    let mut entries = Vec::with_capacity(count);
    for (r, fp) in records.iter().zip(&rendered) {
        let entry = SynthEntry {
            id: r.id.clone(),
            image: format!("{}.png", r.id),
            minutiae: format!("{}.txt", r.id),
            mask: format!("{}_mask.png", r.id),
            record: format!("{}.json", r.id),
            minutiae_count: fp.minutiae.len(),
        };
        fp.image.save_png(&outputs.track(&out.join(&entry.image)))?;
        fp.mask.save_png(&outputs.track(&out.join(&entry.mask)))?;
        outputs.write(&out.join(&entry.minutiae), fp.minutiae.to_text().as_bytes())?;
        outputs.write(&out.join(&entry.record), &pretty_json(r)?)?;
        entries.push(entry);
    }
    let manifest = SynthManifest {
        seed: cfg.seed,
        size: cfg.synth_size,
        entries,
    };
    outputs.write(&out.join("manifest.json"), &pretty_json(&manifest)?)?;
    outputs.commit();
    println!("wrote {count} fingerprints to {}", out.display());
    Ok(())
}

fn pretty_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Where an impression comes from: a synth record, or image files on disk.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EnrollSource {
    Record(PathBuf),
    Files {
        image: PathBuf,
        minutiae: PathBuf,
        #[serde(default)]
        mask: Option<PathBuf>,
    },
}

impl EnrollSource {
    fn relative_to(&self, base: &Path) -> Self {
        match self {
            Self::Record(r) => Self::Record(base.join(r)),
            Self::Files { image, minutiae, mask } => Self::Files {
                image: base.join(image),
                minutiae: base.join(minutiae),
                mask: mask.as_ref().map(|m| base.join(m)),
            },
        }
    }

    fn describe(&self) -> String {
        match self {
            Self::Record(r) => r.display().to_string(),
            Self::Files { image, .. } => image.display().to_string(),
        }
    }
}

enum Loaded {
    Synth(dmd::synth::SynthFingerprint),
    Files(Impression),
}

fn load_source(source: &EnrollSource) -> Result<Loaded> {
    match source {
        EnrollSource::Record(path) => {
            let record: SynthRecord = read_json(path)?;
            Ok(Loaded::Synth(record.render()?))
        }
        EnrollSource::Files { image, minutiae, mask } => {
            let image = GrayImage::load(image).with_context(|| format!("reading {}", image.display()))?;
            let text = std::fs::read_to_string(minutiae).with_context(|| format!("reading {}", minutiae.display()))?;
            let stem = minutiae
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let minutiae = MinutiaSet::parse_text(&text, stem)?;
            let mask = match mask {
                Some(m) => SegMask::load(m).with_context(|| format!("reading {}", m.display()))?,
                None => SegMask::filled(image.width(), image.height(), 1.0),
            };
            Ok(Loaded::Files(Impression { image, minutiae, mask }))
        }
    }
}

fn impression(source: &EnrollSource) -> Result<Impression> {
    Ok(match load_source(source)? {
        Loaded::Synth(fp) => Impression::from(&fp),
        Loaded::Files(imp) => imp,
    })
}

pub fn enroll(cfg: &RunConfig, source: &EnrollSource, out: &Path) -> Result<()> {
    let template = match load_source(source)? {
        Loaded::Synth(fp) => {
            ensure!(!fp.minutiae.is_empty(), "{} has no minutiae", source.describe());
            extract_template(&fp, &cfg.oracle)?
        }
        Loaded::Files(imp) => {
            ensure!(!imp.minutiae.is_empty(), "{} has no minutiae", source.describe());
            extract_template_from_image(&imp.image, &imp.mask, imp.minutiae.as_slice(), &cfg.oracle)?
        }
    };
    let template = if cfg.binary { template.to_binary() } else { template };
    let mut outputs = Outputs::new();
    let mut w = outputs.create(out)?;
    template.write_to(&mut w)?;
    w.flush()?;
    drop(w);
    outputs.commit();
    println!(
        "enrolled {} {} descriptors into {}",
        template.len(),
        if template.is_binary() { "binary" } else { "float" },
        out.display()
    );
    Ok(())
}

fn load_template(path: &Path) -> Result<Template> {
    Template::load(path).with_context(|| format!("reading template {}", path.display()))
}

fn check_compatible(a: &Template, b: &Template) -> Result<()> {
    ensure!(
        a.is_binary() == b.is_binary(),
        "template formats differ (one binary, one float)"
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct MatchReport {
    score: f64,
    n_m: usize,
    pairs: Vec<PairReport>,
}

#[derive(Debug, Serialize)]
struct PairReport {
    a: usize,
    b: usize,
    score: f64,
}

pub fn match_pair(cfg: &RunConfig, a: &Path, b: &Path, out: Option<&Path>) -> Result<()> {
    let (mut ta, mut tb) = (load_template(a)?, load_template(b)?);
    if cfg.binary {
        (ta, tb) = (ta.to_binary(), tb.to_binary());
    }
    check_compatible(&ta, &tb)?;
    let r = match_templates(&ta, &tb, &cfg.matcher)?;
    let report = MatchReport {
        score: r.score,
        n_m: r.n_m,
        pairs: r
            .pairs
            .iter()
            .map(|p| PairReport {
                a: p.a,
                b: p.b,
                score: p.score,
            })
            .collect(),
    };
    let json = pretty_json(&report)?;
    std::io::stdout().write_all(&json)?;
    if let Some(path) = out {
        let mut outputs = Outputs::new();
        outputs.write(path, &json)?;
        outputs.commit();
    }
    Ok(())
}

fn score_or_zero(a: &Template, b: &Template, cfg: &MatchConfig) -> Result<f64> {
    match match_templates(a, b, cfg) {
        Ok(r) => Ok(r.score),
        Err(dmd::error::DmdError::Empty(_)) => Ok(0.0),
        Err(e) => Err(e.into()),
    }
}

pub fn identify(cfg: &RunConfig, probe: &Path, gallery_dir: &Path, out: Option<&Path>) -> Result<()> {
    let probe = load_template(probe)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(gallery_dir)
        .with_context(|| format!("reading gallery {}", gallery_dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "dmd"));
    paths.sort();
    ensure!(
        !paths.is_empty(),
        "gallery {} has no .dmd templates",
        gallery_dir.display()
    );
    let gallery = paths.iter().map(|p| load_template(p)).collect::<Result<Vec<_>>>()?;
    for g in &gallery {
        check_compatible(&probe, g)?;
    }
    let scores = gallery
        .par_iter()
        .map(|g| score_or_zero(&probe, g, &cfg.matcher))
        .collect::<Result<Vec<f64>>>()?;
    let mut ranked: Vec<(String, f64)> = paths
        .iter()
        .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .zip(scores)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    match out {
        Some(path) => {
            let mut outputs = Outputs::new();
            let mut w = outputs.create(path)?;
            write_ranking_csv(&ranked, &mut w)?;
            w.flush()?;
            drop(w);
            outputs.commit();
        }
        None => write_ranking_csv(&ranked, std::io::stdout().lock())?,
    }
    Ok(())
}

/// Closed-set protocol: template paths are relative to the manifest.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolManifest {
    pub gallery: Vec<ProtocolGallery>,
    pub probes: Vec<ProtocolProbe>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolGallery {
    pub id: String,
    pub template: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolProbe {
    pub id: String,
    pub mate: String,
    pub template: PathBuf,
}

pub fn evaluate_manifest(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let m: ProtocolManifest = read_json(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    let convert = |t: Template| if cfg.binary { t.to_binary() } else { t };
    let gallery_t = m
        .gallery
        .iter()
        .map(|g| load_template(&base.join(&g.template)).map(convert))
        .collect::<Result<Vec<_>>>()?;
    let probe_t = m
        .probes
        .iter()
        .map(|p| load_template(&base.join(&p.template)).map(convert))
        .collect::<Result<Vec<_>>>()?;
    let gallery: Vec<GalleryEntry> = m
        .gallery
        .iter()
        .zip(&gallery_t)
        .map(|(g, template)| GalleryEntry { id: &g.id, template })
        .collect();
    let probes: Vec<ProbeEntry> = m
        .probes
        .iter()
        .zip(&probe_t)
        .map(|(p, template)| ProbeEntry {
            id: &p.id,
            mate: &p.mate,
            template,
        })
        .collect();
    let outcome = evaluate_protocol(&probes, &gallery, &cfg.matcher)?;
    let summary = Summary::compute(&outcome.run, &outcome.scores, gallery.len(), &cfg.hash())?;
    write_summary(out, &outcome.run, &outcome.scores, &summary)
}

fn write_summary(
    out: &Path,
    run: &dmd::eval::IdentificationRun,
    scores: &dmd::eval::ScoreSets,
    summary: &Summary,
) -> Result<()> {
    let mut outputs = Outputs::new();
    outputs.dir(out)?;
    for name in ["cmc.csv", "det.csv", "scores.csv", "summary.json"] {
        outputs.track(&out.join(name));
    }
    write_outputs(out, run, scores, summary)?;
    outputs.commit();
    println!(
        "rank1 {:.4}  tar@far=1% {:.4}  tar@far=0.1% {:.4}",
        summary.rank1, summary.tar_at_far_1e2, summary.tar_at_far_1e3
    );
    Ok(())
}

pub fn evaluate_benchmark(cfg: &RunConfig, out: &Path) -> Result<()> {
    let fingers = benchmark_fingers(&cfg.benchmark, cfg.seed)?;
    let float = enroll_benchmark(&fingers, &cfg.oracle)?;
    let binary = float.to_binary();
    let templates = if cfg.binary { &binary } else { &float };
    let outcome = run_identification(templates, &cfg.matcher)?;
    let mut summary = Summary::compute(&outcome.run, &outcome.scores, fingers.len(), &cfg.hash())?;
    for (fmt, t) in [("float", &float), ("binary", &binary)] {
        for (norm, normalize_overlap) in [("normalized", true), ("unnormalized", false)] {
            let mc = MatchConfig {
                normalize_overlap,
                ..cfg.matcher
            };
            let o = run_identification(t, &mc)?;
            summary.extra.insert(format!("rank1_{fmt}_{norm}"), rank1(&o.run)?);
        }
    }
    write_summary(out, &outcome.run, &outcome.scores, &summary)
}

/// Genuine impression pairs; paths are relative to the manifest.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsManifest {
    pub pairs: Vec<[EnrollSource; 2]>,
}

pub fn gen_pairs(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<()> {
    let m: PairsManifest = read_json(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new(""));
    let impressions = m
        .pairs
        .par_iter()
        .map(|[a, b]| Ok((impression(&a.relative_to(base))?, impression(&b.relative_to(base))?)))
        .collect::<Result<Vec<_>>>()?;
    let selections = select_batch(&impressions, &cfg.traingen);

    let mut outputs = Outputs::new();
    outputs.dir(out)?;
    let patches = out.join("patches");
    outputs.dir(&patches)?;
    let mut listing = outputs.create(&out.join("pairs.txt"))?;
    let mut next_class = 0;
    for (k, ((a, b), sel)) in impressions.iter().zip(selections).enumerate() {
        let sel = sel.with_context(|| format!("selecting pairs for manifest entry {k}"))?;
        let pp = generate_patch_pairs(a, b, &sel, &cfg.traingen, next_class)?;
        for p in &pp {
            outputs.track(&patches.join(format!("{:06}_a.png", p.class_id)));
            outputs.track(&patches.join(format!("{:06}_b.png", p.class_id)));
        }
        write_patch_pairs(&patches, &pp, &mut listing)?;
        next_class += pp.len();
    }
    listing.flush()?;
    drop(listing);
    if next_class == 0 && !m.pairs.is_empty() {
        eprintln!("warning: no mated minutiae selected");
    }
    outputs.commit();
    println!("wrote {next_class} patch pairs from {} impression pairs", m.pairs.len());
    Ok(())
}
