use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::task::TaskSpec;
use crate::error::{Error, Result};
use crate::flow::{FlowTrainConfig, IntegratorConfig};
use crate::metrics::SsimConfig;
use crate::mmvae::LossWeights;
use crate::nn::Activation;
use crate::synth::DatasetConfig;
use crate::train::OptimConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub vae_hidden: Vec<usize>,
    pub flow_hidden: Vec<usize>,
    pub direct_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            vae_hidden: vec![64],
            flow_hidden: vec![64, 64],
            direct_hidden: vec![64],
            activation: Activation::Tanh,
        }
    }
}

/// Everything a benchmark run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub optimizer: OptimConfig,
    pub flow: FlowTrainConfig,
    pub integrator: IntegratorConfig,
    pub ssim: SsimConfig,
    pub tasks: Vec<TaskSpec>,
    /// Score the full test split instead of test-mini.
    pub full_test: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            optimizer: OptimConfig::default(),
            flow: FlowTrainConfig::default(),
            integrator: IntegratorConfig::default(),
            ssim: SsimConfig::default(),
            tasks: TaskSpec::defaults(),
            full_test: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.weights.validate()?;
        let m = &self.model;
        if m.latent_dim == 0 || [&m.vae_hidden, &m.flow_hidden, &m.direct_hidden].iter().any(|h| h.contains(&0)) {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.integrator.steps == 0 {
            return Err(Error::Config("integrator needs at least one step".into()));
        }
        if !(self.integrator.noise_sigma >= 0.0) || !(self.flow.interpolant.sigma >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("no tasks configured".into()));
        }
        if self.dataset.n_studies < 20 {
            return Err(Error::Config(format!("{} studies; need at least 20", self.dataset.n_studies)));
        }
        Ok(())
    }

    /// Compact JSON with fields in declaration order; the hashing input.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Reads a config file, or the `config` field of a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let inner = match value.get("config") {
            Some(c) if value.get("config_hash").is_some() => c.clone(),
            _ => value,
        };
        let cfg: RunConfig = serde_json::from_value(inner)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&c.canonical_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 9, "optimizer": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.optimizer.epochs, 3);
        assert_eq!(c.optimizer.effective_batch, 8);
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = RunConfig::default();
        c.optimizer.micro_batch = 3;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.model.latent_dim = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.tasks.clear();
        assert!(c.validate().is_err());
    }
}
