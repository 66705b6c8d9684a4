//! Run configuration: one JSON document, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SynthConfig;
use crate::cotrain::CotrainConfig;
use crate::encoder::DEFAULT_DIM;
use crate::error::{Error, Result};
use crate::pair_model::DEFAULT_PAIR_NEGATIVE_RATIO;
use crate::respsel::DEFAULT_CANDIDATES;
use crate::session_model::DEFAULT_SESSION_NEGATIVE_RATIO;
use crate::train::TrainConfig;
use crate::two_step::GreedyConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairConfig {
    pub negatives_per_positive: f64,
    /// Corpus messages sent to the reply generator.
    pub generated_messages: usize,
    pub train: TrainConfig,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            negatives_per_positive: DEFAULT_PAIR_NEGATIVE_RATIO,
            generated_messages: 0,
            train: TrainConfig {
                epochs: 3,
                lr: 1e-5,
                batch_size: 64,
                seed: 0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub negatives_per_positive: f64,
    pub train: TrainConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            negatives_per_positive: DEFAULT_SESSION_NEGATIVE_RATIO,
            train: TrainConfig {
                epochs: 3,
                lr: 1e-4,
                batch_size: 64,
                seed: 0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RespselConfig {
    pub n_candidates: usize,
    pub train: TrainConfig,
}

impl Default for RespselConfig {
    fn default() -> Self {
        RespselConfig {
            n_candidates: DEFAULT_CANDIDATES,
            train: TrainConfig {
                epochs: 5,
                lr: 1e-3,
                batch_size: 16,
                seed: 0,
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub dev_corpus: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub dim: usize,
    pub seed: u64,
    pub pair: PairConfig,
    pub session: SessionConfig,
    pub cotrain: CotrainConfig,
    pub greedy: GreedyConfig,
    pub respsel: RespselConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            dim: DEFAULT_DIM,
            seed: 0,
            pair: PairConfig::default(),
            session: SessionConfig::default(),
            cotrain: CotrainConfig::default(),
            greedy: GreedyConfig::default(),
            respsel: RespselConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        let rates = [
            ("pair.train.lr", self.pair.train.lr),
            ("session.train.lr", self.session.train.lr),
            ("cotrain.rl_lr", self.cotrain.rl_lr),
            ("cotrain.pair_retrain.lr", self.cotrain.pair_retrain.lr),
            ("respsel.train.lr", self.respsel.train.lr),
        ];
        for (name, lr) in rates {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.cotrain.harvest.lookback == 0 {
            return Err(Error::Config("cotrain.harvest.lookback must be at least 1".into()));
        }
        if self.respsel.n_candidates < 2 {
            return Err(Error::Config("respsel.n_candidates must be at least 2".into()));
        }
        self.cotrain.reward.validate()?;
        self.greedy.validate()?;
        self.synth.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(c.pair.train.lr, 1e-5);
        assert_eq!(c.session.train.lr, 1e-4);
        assert_eq!(c.cotrain.rl_lr, 1e-5);
        assert_eq!(c.cotrain.reward.gamma, 0.6);
        assert_eq!(c.cotrain.iterations, 3);
        assert_eq!(c.cotrain.harvest.min_overlap, 2);
        assert_eq!(c.greedy.threshold, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"dim": 16, "cotrain": {"iterations": 1}}"#).unwrap();
        assert_eq!(c.dim, 16);
        assert_eq!(c.cotrain.iterations, 1);
        assert_eq!(c.cotrain.rl_passes, 2);
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_non_positive_rates() {
        let mut c = RunConfig::default();
        c.cotrain.rl_lr = 0.0;
        assert!(c.validate().is_err());
    }
}
