//! Identification metrics (CMC, DET, TAR at fixed FAR), their file outputs
//! and the synthetic benchmark protocol.

mod benchmark;
mod metrics;

pub use benchmark::{
    benchmark_fingers, enroll_benchmark, evaluate_protocol, run_identification, BenchmarkConfig, BenchmarkOutcome,
    BenchmarkTemplates, FingerPair, GalleryEntry, ProbeEntry,
};
pub use metrics::{
    cmc_curve, det_curve, rank1, tar_at_far, write_cmc_csv, write_det_csv, write_outputs, write_ranking_csv,
    write_scores_csv, IdentificationRun, ProbeRanking, ScoreSets, Summary,
};
