//! Single-file run configuration covering every module.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::DescriptorConfig;
use crate::error::{DmdError, Result};
use crate::eval::BenchmarkConfig;
use crate::losses::LossConfig;
use crate::matcher::MatchConfig;
use crate::mcc::MccParams;
use crate::minutiae_map::MapConfig;
use crate::synth::{AugmentConfig, DistortionConfig, OracleConfig, ORACLE_CHANNELS};
use crate::traingen::TrainGenConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Store and match binarized descriptors.
    pub binary: bool,
    /// Canvas side of synthesized fingerprints.
    pub synth_size: usize,
    pub matcher: MatchConfig,
    pub mcc: MccParams,
    pub traingen: TrainGenConfig,
    pub distortion: DistortionConfig,
    pub augment: AugmentConfig,
    pub descriptor: DescriptorConfig,
    pub map: MapConfig,
    pub loss: LossConfig,
    pub oracle: OracleConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            binary: false,
            synth_size: 256,
            matcher: MatchConfig::default(),
            mcc: MccParams::default(),
            traingen: TrainGenConfig::default(),
            distortion: DistortionConfig::default(),
            augment: AugmentConfig::default(),
            descriptor: DescriptorConfig::default(),
            map: MapConfig::default(),
            loss: LossConfig::default(),
            oracle: OracleConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DmdError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DmdError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.matcher.validate()?;
        self.traingen.validate()?;
        if self.descriptor.channels != ORACLE_CHANNELS {
            return Err(DmdError::Config(format!(
                "descriptor channels must be {ORACLE_CHANNELS} to match the oracle extractor"
            )));
        }
        if self.synth_size < crate::synth::MIN_SIZE {
            return Err(DmdError::Config(format!(
                "synth_size must be at least {}",
                crate::synth::MIN_SIZE
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
