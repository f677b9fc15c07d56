use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};

/// Genuine and impostor comparison scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSets {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSets {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Self {
        Self { genuine, impostor }
    }

    fn check(&self) -> Result<()> {
        if self.genuine.is_empty() {
            return Err(DmdError::Empty("genuine scores"));
        }
        if self.impostor.is_empty() {
            return Err(DmdError::Empty("impostor scores"));
        }
        if self.genuine.iter().chain(&self.impostor).any(|s| s.is_nan()) {
            return Err(DmdError::InvalidArgument("NaN score".into()));
        }
        Ok(())
    }
}

/// Ranked gallery for one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRanking {
    pub probe: String,
    pub mate: String,
    /// Gallery ids with scores, best first.
    pub ranked: Vec<(String, f64)>,
}

impl ProbeRanking {
    /// 1-based rank of the mate, `None` if absent.
    pub fn mate_rank(&self) -> Option<usize> {
        self.ranked.iter().position(|(id, _)| *id == self.mate).map(|p| p + 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentificationRun {
    pub probes: Vec<ProbeRanking>,
}

impl IdentificationRun {
    pub fn validate(&self) -> Result<()> {
        if self.probes.is_empty() {
            return Err(DmdError::Empty("identification run"));
        }
        for p in &self.probes {
            let mates = p.ranked.iter().filter(|(id, _)| *id == p.mate).count();
            if mates != 1 {
                return Err(DmdError::InvalidArgument(format!(
                    "probe {} has {mates} mates in its gallery",
                    p.probe
                )));
            }
        }
        Ok(())
    }
}

/// Entry `k − 1` is the fraction of probes whose mate ranks at most `k`.
pub fn cmc_curve(run: &IdentificationRun, max_rank: usize) -> Result<Vec<f64>> {
    run.validate()?;
    if max_rank == 0 {
        return Err(DmdError::InvalidArgument("max rank must be positive".into()));
    }
    let n = run.probes.len() as f64;
    let mut counts = vec![0usize; max_rank];
    for p in &run.probes {
        if let Some(r) = p.mate_rank().filter(|&r| r <= max_rank) {
            counts[r - 1] += 1;
        }
    }
    let mut acc = 0;
    Ok(counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect())
}

pub fn rank1(run: &IdentificationRun) -> Result<f64> {
    Ok(cmc_curve(run, 1)?[0])
}

/// `(FMR, FNMR)` at every distinct score used as threshold, plus one
/// threshold above all scores; sorted by FMR. A comparison matches when its
/// score is `≥ t`.
pub fn det_curve(s: &ScoreSets) -> Result<Vec<(f64, f64)>> {
    s.check()?;
    let mut thresholds: Vec<f64> = s.genuine.iter().chain(&s.impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut imp = s.impostor.clone();
    let mut gen = s.genuine.clone();
    imp.sort_by(f64::total_cmp);
    gen.sort_by(f64::total_cmp);
    let (ni, ng) = (imp.len() as f64, gen.len() as f64);
    // counts of scores strictly below t
    let below = |v: &[f64], t: f64| v.partition_point(|&x| x < t) as f64;
    let mut pts: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| ((ni - below(&imp, t)) / ni, below(&gen, t) / ng))
        .collect();
    pts.push((0.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.dedup();
    Ok(pts)
}

/// True accept rate at the most permissive threshold whose false match rate
/// stays strictly below `far`. Thresholds sit just above an impostor score,
/// so with `k = ⌈far·N⌉ − 1` tolerated false matches the threshold clears the
/// `(k+1)`-th highest impostor. A `far` below `1/N` therefore uses the
/// highest impostor.
pub fn tar_at_far(s: &ScoreSets, far: f64) -> Result<f64> {
    s.check()?;
    if !(far > 0.0 && far < 1.0) {
        return Err(DmdError::InvalidArgument(format!("far {far} outside (0, 1)")));
    }
    let mut imp = s.impostor.clone();
    imp.sort_by(|a, b| b.total_cmp(a));
    let n = imp.len();
    let k = ((far * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
    let t = imp[k];
    let accepted = s.genuine.iter().filter(|&&g| g > t).count();
    Ok(accepted as f64 / s.genuine.len() as f64)
}

pub fn write_cmc_csv(curve: &[f64], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "rate"]).map_err(csv_err)?;
    for (i, r) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), r.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_det_csv(points: &[(f64, f64)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fmr", "fnmr"]).map_err(csv_err)?;
    for (a, b) in points {
        w.write_record([a.to_string(), b.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One `(probe, gallery, score)` row per comparison of the run, in probe
/// order then rank order.
pub fn write_scores_csv(run: &IdentificationRun, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["probe", "gallery", "score"]).map_err(csv_err)?;
    for p in &run.probes {
        for (g, s) in &p.ranked {
            w.write_record([p.probe.as_str(), g.as_str(), &s.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `(gallery, score)` rows of one ranked gallery.
pub fn write_ranking_csv(ranked: &[(String, f64)], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gallery", "score"]).map_err(csv_err)?;
    for (g, s) in ranked {
        w.write_record([g.as_str(), &s.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `cmc.csv`, `det.csv`, `scores.csv` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, run: &IdentificationRun, scores: &ScoreSets, summary: &Summary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let max_rank = run.probes.iter().map(|p| p.ranked.len()).max().unwrap_or(1).max(1);
    write_cmc_csv(&cmc_curve(run, max_rank)?, File::create(dir.join("cmc.csv"))?)?;
    write_det_csv(&det_curve(scores)?, File::create(dir.join("det.csv"))?)?;
    write_scores_csv(run, File::create(dir.join("scores.csv"))?)?;
    let mut f = File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, summary)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn csv_err(e: csv::Error) -> DmdError {
    DmdError::Io(e.into())
}

/// Headline metrics written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rank1: f64,
    #[serde(rename = "tar_at_far_0.01")]
    pub tar_at_far_1e2: f64,
    #[serde(rename = "tar_at_far_0.001")]
    pub tar_at_far_1e3: f64,
    pub probes: usize,
    pub gallery: usize,
    pub genuine: usize,
    pub impostor: usize,
    pub config_hash: String,
    /// Extra named results such as ablation runs.
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub extra: std::collections::BTreeMap<String, f64>,
}

impl Summary {
    pub fn compute(run: &IdentificationRun, scores: &ScoreSets, gallery: usize, config_hash: &str) -> Result<Self> {
        Ok(Self {
            rank1: rank1(run)?,
            tar_at_far_1e2: tar_at_far(scores, 0.01)?,
            tar_at_far_1e3: tar_at_far(scores, 0.001)?,
            probes: run.probes.len(),
            gallery,
            genuine: scores.genuine.len(),
            impostor: scores.impostor.len(),
            config_hash: config_hash.to_string(),
            extra: Default::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn run_with_ranks(ranks: &[usize], gallery: usize) -> IdentificationRun {
        let probes = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut ids: Vec<String> = (0..gallery).map(|g| format!("other{g}")).collect();
                ids[r - 1] = format!("mate{i}");
                ProbeRanking {
                    probe: format!("p{i}"),
                    mate: format!("mate{i}"),
                    ranked: ids.into_iter().enumerate().map(|(k, id)| (id, -(k as f64))).collect(),
                }
            })
            .collect();
        IdentificationRun { probes }
    }

    #[test]
    fn cmc_examples() {
        assert_eq!(cmc_curve(&run_with_ranks(&[1, 1, 1], 4), 3).unwrap(), vec![1.0; 3]);
        let c = cmc_curve(&run_with_ranks(&[1, 2, 5], 6), 5).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(c, vec![third, 2.0 * third, 2.0 * third, 2.0 * third, 1.0]);
        assert_eq!(cmc_curve(&run_with_ranks(&[6, 6], 6), 5).unwrap(), vec![0.0; 5]);
        assert!(cmc_curve(&IdentificationRun::default(), 3).is_err());
    }

    #[test]
    fn det_examples() {
        let s = ScoreSets::new(vec![0.9, 0.8], vec![0.3, 0.1]);
        let pts = det_curve(&s).unwrap();
        assert!(pts.contains(&(0.0, 0.0)));
        // hand evaluation at threshold 0.5: no impostor ≥ 0.5, no genuine < 0.5
        let fmr = s.impostor.iter().filter(|&&x| x >= 0.5).count();
        let fnmr = s.genuine.iter().filter(|&&x| x < 0.5).count();
        assert_eq!((fmr, fnmr), (0, 0));
        assert!(det_curve(&ScoreSets::new(vec![], vec![0.1])).is_err());
    }

    #[test]
    fn det_chance_line_for_identical_distributions() {
        let v: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let pts = det_curve(&ScoreSets::new(v.clone(), v)).unwrap();
        for (fmr, fnmr) in pts {
            assert!((fnmr - (1.0 - fmr)).abs() <= 1.0 / 200.0 + 1e-12);
        }
    }

    #[test]
    fn tar_examples() {
        let s = ScoreSets::new(vec![0.9, 0.7, 0.5, 0.3], vec![0.6, 0.4, 0.2, 0.1]);
        assert_eq!(tar_at_far(&s, 0.25).unwrap(), 0.5);
        let sep = ScoreSets::new(vec![0.9, 0.8], vec![0.1, 0.2]);
        for far in [0.001, 0.1, 0.5, 0.9] {
            assert_eq!(tar_at_far(&sep, far).unwrap(), 1.0);
        }
        // far below 1/N falls back to the highest impostor score
        assert_eq!(tar_at_far(&s, 0.01).unwrap(), 0.5);
        assert!(tar_at_far(&s, 0.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_cmc_csv(&[0.5, 1.0], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "rank,rate\n1,0.5\n2,1\n");
    }

    fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-5.0f64..5.0, 1..40),
            prop::collection::vec(-5.0f64..5.0, 1..40),
        )
    }

    proptest! {
        #[test]
        fn det_is_monotone((g, i) in scores()) {
            let pts = det_curve(&ScoreSets::new(g, i)).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[0].0 <= w[1].0);
                prop_assert!(w[0].1 >= w[1].1);
            }
        }

        #[test]
        fn metrics_invariant_under_increasing_transform((g, i) in scores(), far in 0.01f64..0.99) {
            let s = ScoreSets::new(g.clone(), i.clone());
            let f = |x: &f64| x.exp() * 3.0 + 1.0;
            let t = ScoreSets::new(g.iter().map(f).collect(), i.iter().map(f).collect());
            prop_assert_eq!(tar_at_far(&s, far).unwrap(), tar_at_far(&t, far).unwrap());
            prop_assert_eq!(det_curve(&s).unwrap(), det_curve(&t).unwrap());
        }

        #[test]
        fn tar_non_decreasing_in_far((g, i) in scores(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let s = ScoreSets::new(g, i);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(tar_at_far(&s, lo).unwrap() <= tar_at_far(&s, hi).unwrap());
        }

        #[test]
        fn cmc_non_decreasing(ranks in prop::collection::vec(1usize..10, 1..30)) {
            let c = cmc_curve(&run_with_ranks(&ranks, 10), 10).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert_eq!(c[9], 1.0);
        }
    }
}
