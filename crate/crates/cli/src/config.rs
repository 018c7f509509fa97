use std::path::Path;

use anyhow::Context as _;
use serde::{Deserialize, Serialize};

use planseq_core::dataset::{Quantizer, SampleParams, ViewParams};
use planseq_core::distmap::DistmapConfig;
use planseq_core::infer::SamplerConfig;
use planseq_core::model::{ModelConfig, TrainConfig};
use planseq_core::rng::derive_seed;
use planseq_core::CanonParams;

/// Every tunable of a run. Missing keys take their defaults; unknown keys
/// are rejected.
///
/// Per-stage seeds inside the sections are ignored: each stage derives its
/// own from `rng_seed` (see [`RunConfig::seeded`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub rng_seed: u64,
    /// Target share of records assigned to the test split.
    pub test_fraction: f64,
    pub canon: CanonParams,
    pub view: ViewParams,
    pub sample: SampleParams,
    pub quantizer: Quantizer,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub distmap: DistmapConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            test_fraction: 0.1,
            canon: CanonParams::default(),
            view: ViewParams::default(),
            sample: SampleParams::default(),
            quantizer: Quantizer::default(),
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            distmap: DistmapConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Copies `rng_seed` into every stage through named substreams.
    pub fn seeded(mut self) -> Self {
        let s = self.rng_seed;
        self.sample.rng_seed = derive_seed(s, "viewpoints", 0);
        self.train.seed = derive_seed(s, "train", 0);
        self.sampler.rng_seed = derive_seed(s, "sampler", 0);
        self
    }

    /// Seed for model initialization.
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.rng_seed, "init", 0)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.canon.validate()?;
        self.view.validate()?;
        self.sample.validate()?;
        self.quantizer.validate()?;
        self.model.validate()?;
        self.sampler.validate()?;
        if self.quantizer.n_q != self.model.n_q {
            anyhow::bail!("quantizer has {} bins but the model expects {}", self.quantizer.n_q, self.model.n_q);
        }
        if self.view.n_segs > self.model.n_segs {
            anyhow::bail!("views hold up to {} segments but the model takes {}", self.view.n_segs, self.model.n_segs);
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            anyhow::bail!("test_fraction {} outside [0, 1)", self.test_fraction);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_unknown_keys_fail() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"nope": 1}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"extra": 1}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"rng_seed": 7, "model": {"embed_dim": 64}}"#).unwrap();
        assert_eq!((partial.rng_seed, partial.model.embed_dim, partial.model.layers), (7, 64, 6));
    }

    #[test]
    fn stage_seeds_follow_the_top_level_seed() {
        let a = RunConfig { rng_seed: 1, ..Default::default() }.seeded();
        let b = RunConfig { rng_seed: 2, ..Default::default() }.seeded();
        assert_ne!(a.train.seed, b.train.seed);
        assert_ne!(a.sample.rng_seed, a.sampler.rng_seed);
        assert_eq!(a, RunConfig { rng_seed: 1, ..Default::default() }.seeded());
    }
}
