//! Synthetic fingerprints with exact ground truth, elastic distortion,
//! plain-impression cropping, patch augmentation and the oracle descriptor
//! extractor.

mod augment;
mod distort;
mod generator;
mod oracle;
mod plain;
mod record;

pub use augment::{augment, augment_with, AugmentConfig, AugmentParams};
pub use distort::{apply_distortion, warp, DistortionConfig, DistortionField};
pub use generator::{
    axial, synth_fingerprint, Ellipse, FingerModel, Spiral, SynthFingerprint, Wave, BACKGROUND, MIN_SIZE,
    NOMINAL_PERIOD,
};
pub use oracle::{
    extract_descriptor, extract_template, extract_template_from_image, oracle_extract, structure_tensor_orientation,
    OracleConfig, OracleFeatures, PatchTruth, ORACLE_CHANNELS,
};
pub use plain::{elliptical_crop, simulate_plain};
pub use record::{CropSpec, SynthRecord};
