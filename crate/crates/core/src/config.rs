//! Training configuration, read from a flat TOML file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Variational training of the generative model and inference network.
    Urnng,
    /// Both networks trained on gold trees.
    Supervised,
    /// Recurrent language model without trees.
    Lm,
    TrivialLeft,
    TrivialRight,
    /// A uniformly drawn tree per sentence, fixed for the whole run.
    TrivialRandom,
    /// Variational training continued from a supervised checkpoint.
    Finetune,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::Urnng,
        Mode::Supervised,
        Mode::Lm,
        Mode::TrivialLeft,
        Mode::TrivialRight,
        Mode::TrivialRandom,
        Mode::Finetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Urnng => "urnng",
            Mode::Supervised => "supervised",
            Mode::Lm => "lm",
            Mode::TrivialLeft => "trivial-left",
            Mode::TrivialRight => "trivial-right",
            Mode::TrivialRandom => "trivial-random",
            Mode::Finetune => "finetune",
        }
    }

    /// Trained with the sampled-tree variational objective.
    pub fn is_variational(self) -> bool {
        matches!(self, Mode::Urnng | Mode::Finetune)
    }

    pub fn has_trees(self) -> bool {
        self != Mode::Lm
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Samples per sentence for the Monte Carlo estimators.
    pub samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs over which the prior and entropy weight rises linearly from 0 to 1.
    pub anneal_epochs: usize,

    pub theta_lr: f64,
    pub action_lr: f64,
    pub theta_clip: f64,
    pub phi_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub phi_clip: f64,
    /// The inference network stops training after this many epochs (variational modes).
    pub phi_epochs: usize,
    pub decay_factor: f64,
    /// Epochs before a validation stall may trigger learning-rate decay.
    pub decay_grace: usize,
    /// Learning rate of the generative model when fine-tuning; the action
    /// head keeps its ratio to it.
    pub finetune_lr: f64,

    pub init_range: f64,
    pub word_dim: usize,
    pub q_hidden: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub q_dropout: f64,
    /// Longest sentence the position table supports.
    pub max_len: usize,
    /// Training tokens seen fewer times become unknown.
    pub min_count: usize,
    /// Mean posterior entropy (nats) below which an epoch is flagged as collapsed.
    pub collapse_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Urnng,
            seed: 3435,
            samples: 8,
            batch_size: 16,
            epochs: 18,
            anneal_epochs: 2,
            theta_lr: 1.0,
            action_lr: 0.1,
            theta_clip: 5.0,
            phi_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            phi_clip: 1.0,
            phi_epochs: 2,
            decay_factor: 2.0,
            decay_grace: 8,
            finetune_lr: 0.1,
            init_range: 0.1,
            word_dim: 650,
            q_hidden: 256,
            mlp_hidden: 256,
            dropout: 0.5,
            q_dropout: 0.5,
            max_len: 100,
            min_count: 2,
            collapse_threshold: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.mode.is_variational() && self.samples < 2 {
            return bad(format!("{} mode needs samples >= 2, got {}", self.mode, self.samples));
        }
        for (name, v) in [
            ("theta_lr", self.theta_lr),
            ("action_lr", self.action_lr),
            ("theta_clip", self.theta_clip),
            ("phi_lr", self.phi_lr),
            ("adam_eps", self.adam_eps),
            ("phi_clip", self.phi_clip),
            ("finetune_lr", self.finetune_lr),
            ("init_range", self.init_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if self.decay_factor.is_nan() || self.decay_factor < 1.0 {
            return bad(format!("decay_factor must be >= 1, got {}", self.decay_factor));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        for (name, v) in [("dropout", self.dropout), ("q_dropout", self.q_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        for (name, v) in [
            ("samples", self.samples),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("word_dim", self.word_dim),
            ("q_hidden", self.q_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("max_len", self.max_len),
            ("min_count", self.min_count),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig {
            mode: Mode::TrivialRandom,
            word_dim: 32,
            ..TrainConfig::default()
        };
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_use_defaults() {
        let cfg = TrainConfig::from_toml("mode = \"supervised\"\nsamples = 1\n").unwrap();
        assert_eq!(cfg.mode, Mode::Supervised);
        assert_eq!(cfg.batch_size, 16);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(TrainConfig::from_toml("samples = 1").is_err());
        assert!(TrainConfig::from_toml("theta_lr = 0.0").is_err());
        assert!(TrainConfig::from_toml("dropout = 1.0").is_err());
        assert!(TrainConfig::from_toml("no_such_key = 3").is_err());
        assert!(TrainConfig::from_toml("mode = \"bogus\"").is_err());
    }

    #[test]
    fn mode_names() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
    }
}
