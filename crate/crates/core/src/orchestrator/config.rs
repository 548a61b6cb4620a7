use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{EndpointConfig, ToyLevelSpec, ToyWorldConfig};
use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;

/// GRPO schedule for one role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub steps: usize,
    /// Rollouts per prompt slot (G).
    pub group_size: usize,
    /// Prompt slots (challenger) or dataset questions (solver) per step.
    pub batch: usize,
    pub learning_rate: f64,
    pub kl_coeff: f64,
    pub clip_eps: f64,
    pub eps_norm: f64,
}

impl PhaseConfig {
    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            eps_norm: self.eps_norm,
            clip_eps: self.clip_eps,
            kl_coeff: self.kl_coeff,
            learning_rate: self.learning_rate,
            group_size: self.group_size,
        }
    }

    fn validate(&self, role: &str) -> Result<()> {
        self.grpo()
            .validate()
            .map_err(|e| Error::Config(format!("{role}: {e}")))?;
        if self.batch == 0 {
            return Err(Error::Config(format!("{role}: batch must be >= 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablations {
    pub train_challenger: bool,
    pub filter_enabled: bool,
    pub rep_penalty_enabled: bool,
}

impl Default for Ablations {
    fn default() -> Self {
        Self {
            train_challenger: true,
            filter_enabled: true,
            rep_penalty_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Toy,
    Endpoint,
}

/// Which generations share one repetition-penalty clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepBatchScope {
    /// The G rollouts of one prompt slot.
    Group,
    /// All `batch × group_size` generations of a GRPO step.
    Step,
}

/// Snapshot the KL penalty is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlReference {
    /// The policy that sampled the step's rollouts.
    Sampling,
    /// The role's policy at the start of the run.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub iterations: u32,
    pub pool_size: usize,
    pub vote_samples: usize,
    pub band_delta: f64,
    pub rep_lambda: f64,
    pub bleu_threshold: f64,
    pub rep_batch: RepBatchScope,
    pub kl_reference: KlReference,
    pub reuse_uncertainty_samples: bool,
    pub shared_policy: bool,
    pub export_rollouts: bool,
    pub seed: u64,
    pub backend: BackendKind,
    pub challenger: PhaseConfig,
    pub solver: PhaseConfig,
    pub ablations: Ablations,
    pub toy: ToyWorldConfig,
    pub endpoint: EndpointConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

pub const PRESETS: [&str; 3] = ["default", "toy-smoke", "toy-distractor"];

impl LoopConfig {
    /// Full-scale hyperparameters. The learning rates are the ones used for
    /// billion-parameter models and barely move the toy policies.
    pub fn full_scale() -> Self {
        Self {
            iterations: 3,
            pool_size: 8000,
            vote_samples: 10,
            band_delta: 0.25,
            rep_lambda: 1.0,
            bleu_threshold: 0.5,
            rep_batch: RepBatchScope::Step,
            kl_reference: KlReference::Sampling,
            reuse_uncertainty_samples: false,
            shared_policy: false,
            export_rollouts: false,
            seed: 0,
            backend: BackendKind::Toy,
            challenger: PhaseConfig {
                steps: 5,
                group_size: 4,
                batch: 128,
                learning_rate: 1e-6,
                kl_coeff: 1e-2,
                clip_eps: 0.2,
                eps_norm: 1e-6,
            },
            solver: PhaseConfig {
                steps: 15,
                group_size: 5,
                batch: 128,
                learning_rate: 1e-6,
                kl_coeff: 1e-2,
                clip_eps: 0.2,
                eps_norm: 1e-6,
            },
            ablations: Ablations::default(),
            toy: ToyWorldConfig::default(),
            endpoint: EndpointConfig::default(),
        }
    }

    /// Desk-scale toy run: N = 200, m = 10, one iteration, toy-sized
    /// learning rates and batches.
    pub fn toy_smoke() -> Self {
        let mut c = Self::full_scale();
        c.iterations = 1;
        c.pool_size = 200;
        c.challenger.batch = 16;
        c.challenger.learning_rate = 2.0;
        c.solver.batch = 32;
        c.solver.learning_rate = 2.0;
        c
    }

    /// Toy world whose hardest level gives the correct procedure less
    /// weight than each of its six distractors. Majority votes there are
    /// mostly wrong, so pseudo-label accuracy falls as the challenger
    /// moves toward it.
    pub fn toy_distractor() -> Self {
        let mut c = Self::toy_smoke();
        c.iterations = 3;
        c.toy.levels = vec![
            ToyLevelSpec { distractors: 2, correct_logit: 2.0, lure_logit: 0.0 },
            ToyLevelSpec { distractors: 3, correct_logit: 1.2, lure_logit: 0.0 },
            ToyLevelSpec { distractors: 4, correct_logit: 0.6, lure_logit: 0.0 },
            ToyLevelSpec { distractors: 6, correct_logit: -0.5, lure_logit: 0.0 },
        ];
        c
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" => Some(Self::full_scale()),
            "toy-smoke" => Some(Self::toy_smoke()),
            "toy-distractor" => Some(Self::toy_distractor()),
            _ => None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// A preset name or a path to a TOML file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(c) = Self::preset(spec) {
            return Ok(c);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!(
                "{spec}: not a preset ({}) and not readable: {e}",
                PRESETS.join(", ")
            ))
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{spec}: {m}")),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.pool_size == 0 {
            return bad("pool_size must be >= 1");
        }
        if self.vote_samples == 0 {
            return bad("vote_samples must be >= 1");
        }
        if !(0.0..=0.5).contains(&self.band_delta) {
            return bad("band_delta must lie in [0, 0.5]");
        }
        if !(self.rep_lambda >= 0.0 && self.rep_lambda.is_finite()) {
            return bad("rep_lambda must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.bleu_threshold) {
            return bad("bleu_threshold must lie in [0, 1]");
        }
        self.challenger.validate("challenger")?;
        self.solver.validate("solver")?;
        match self.backend {
            BackendKind::Toy => self.toy.validate()?,
            BackendKind::Endpoint => {
                self.endpoint.validate()?;
                if self.shared_policy {
                    return bad("shared_policy requires trainable (toy) backends");
                }
            }
        }
        Ok(())
    }

    /// Hash of everything that shapes the run except its length, so a
    /// finished run can be resumed with more iterations.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.iterations = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = LoopConfig::preset(name).unwrap();
            c.validate().unwrap();
            let back = LoopConfig::from_toml_str(&c.to_toml_string()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn full_scale_defaults() {
        let c = LoopConfig::full_scale();
        assert_eq!(c.pool_size, 8000);
        assert_eq!(c.vote_samples, 10);
        assert_eq!(c.band_delta, 0.25);
        assert_eq!(c.rep_lambda, 1.0);
        assert_eq!(c.bleu_threshold, 0.5);
        assert_eq!(
            (c.challenger.steps, c.challenger.group_size, c.challenger.batch),
            (5, 4, 128)
        );
        assert_eq!((c.solver.steps, c.solver.group_size, c.solver.batch), (15, 5, 128));
        for p in [&c.challenger, &c.solver] {
            assert_eq!(p.learning_rate, 1e-6);
            assert_eq!(p.kl_coeff, 1e-2);
        }
        assert_eq!(c.endpoint.temperature, 1.0);
        assert_eq!(c.endpoint.top_p, 0.99);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = LoopConfig::toy_smoke().to_toml_string();
        text = format!("bogus_key = 3\n{text}");
        assert!(matches!(LoopConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = LoopConfig::toy_smoke();
        c.band_delta = 0.7;
        assert!(c.validate().is_err());
        let mut c = LoopConfig::toy_smoke();
        c.backend = BackendKind::Endpoint;
        c.shared_policy = true;
        assert!(c.validate().is_err());
        let mut c = LoopConfig::toy_smoke();
        c.solver.group_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_iteration_count() {
        let a = LoopConfig::toy_smoke();
        let mut b = a.clone();
        b.iterations = 9;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
