mod commands;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dmd::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "dmd", version, about = "Dense minutia descriptor fingerprint toolkit")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Use binarized descriptors.
    #[arg(long, global = true)]
    binary: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic fingerprints with ground truth.
    Synth {
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Apply the configured elastic distortion.
        #[arg(long)]
        distort: bool,
        /// Keep only this fraction of the foreground (elliptical crop).
        #[arg(long)]
        crop: Option<f64>,
    },
    /// Build a template from a synth record or an image with minutiae.
    Enroll {
        /// JSON sidecar written by `synth`.
        #[arg(long, conflicts_with_all = ["image", "minutiae", "mask"])]
        record: Option<PathBuf>,
        #[arg(long, requires = "minutiae")]
        image: Option<PathBuf>,
        /// Text file with one `x y theta_degrees` line per minutia.
        #[arg(long, requires = "image")]
        minutiae: Option<PathBuf>,
        #[arg(long, requires = "image")]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two templates.
    Match {
        a: PathBuf,
        b: PathBuf,
        /// Also write the JSON detail here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank every template of a gallery directory against a probe.
    Identify {
        probe: PathBuf,
        gallery: PathBuf,
        /// CSV destination (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an identification protocol and write CMC, DET and summary files.
    Evaluate {
        /// Protocol manifest (JSON); omit with --benchmark.
        #[arg(long, required_unless_present = "benchmark")]
        manifest: Option<PathBuf>,
        /// Run the synthetic benchmark described by the config.
        #[arg(long, conflicts_with = "manifest")]
        benchmark: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select mated minutiae and write aligned training patch pairs.
    GenPairs {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cli.binary {
        cfg.binary = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .context("starting worker pool")?;
    match cli.command {
        Command::Synth {
            count,
            out,
            distort,
            crop,
        } => commands::synth(&cfg, count, &out, distort, crop),
        Command::Enroll {
            record,
            image,
            minutiae,
            mask,
            out,
        } => {
            let source = match (record, image, minutiae) {
                (Some(r), _, _) => commands::EnrollSource::Record(r),
                (None, Some(image), Some(minutiae)) => commands::EnrollSource::Files { image, minutiae, mask },
                _ => anyhow::bail!("enroll needs --record or --image with --minutiae"),
            };
            commands::enroll(&cfg, &source, &out)
        }
        Command::Match { a, b, out } => commands::match_pair(&cfg, &a, &b, out.as_deref()),
        Command::Identify { probe, gallery, out } => commands::identify(&cfg, &probe, &gallery, out.as_deref()),
        Command::Evaluate {
            manifest,
            benchmark,
            out,
        } => match (manifest, benchmark) {
            (_, true) => commands::evaluate_benchmark(&cfg, &out),
            (Some(m), false) => commands::evaluate_manifest(&cfg, &m, &out),
            (None, false) => anyhow::bail!("evaluate needs --manifest or --benchmark"),
        },
        Command::GenPairs { manifest, out } => commands::gen_pairs(&cfg, &manifest, &out),
        Command::Selftest => selftest::run(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
