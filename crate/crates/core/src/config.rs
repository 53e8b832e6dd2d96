//! Run configuration: one file, strict keys, defaults for everything.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::encoder::EncoderConfig;
use crate::error::ConfigError;
use crate::estimator::EstimatorConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub estimator: EstimatorConfig,
    pub detector: DetectorConfig,
    /// Number of propagation spines reported by attribution.
    pub k: usize,
    pub seed: u64,
    pub verbosity: u8,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderConfig::default(),
            estimator: EstimatorConfig::default(),
            detector: DetectorConfig::default(),
            k: 3,
            seed: 0,
            verbosity: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.encoder.validate()?;
        self.estimator.validate()?;
        self.detector.validate()?;
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"k": 3, "mystery": 1}"#;
        let parsed: Result<RunConfig, _> = serde_json::from_str(text);
        assert!(parsed.is_err());
    }

    #[test]
    fn out_of_range_constant_rejected() {
        let mut cfg = RunConfig::default();
        cfg.estimator.alpha = 1.5;
        assert!(cfg.validate().is_err());
    }
}
