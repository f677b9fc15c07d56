use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::distort::{apply_distortion, DistortionConfig};
use super::generator::{synth_fingerprint, SynthFingerprint};
use super::plain::{elliptical_crop, simulate_plain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropSpec {
    pub fraction: f64,
    pub seed: u64,
}

/// Everything needed to re-render one synthetic impression exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRecord {
    pub id: String,
    pub seed: u64,
    pub size: usize,
    #[serde(default)]
    pub distortion: Option<DistortionConfig>,
    #[serde(default)]
    pub crop: Option<CropSpec>,
}

impl SynthRecord {
    pub fn render(&self) -> Result<SynthFingerprint> {
        let mut fp = synth_fingerprint(self.seed, self.size)?;
        if let Some(d) = &self.distortion {
            fp = apply_distortion(&fp, d)?;
        }
        if let Some(c) = &self.crop {
            let mask = elliptical_crop(&fp, c.fraction, c.seed)?;
            fp = simulate_plain(&fp, &mask)?;
        }
        Ok(fp)
    }
}
