//! Tuned PPO settings for the two action spaces, consumed by external trainers.
//! Anything not listed here is left to the trainer's defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::policy::ActionSpaceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArch {
    pub layers: usize,
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoHyperparams {
    pub action_space: ActionSpaceKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub features_dim: usize,
    pub activation: Activation,
    pub policy_net: NetArch,
    pub value_net: NetArch,
}

impl PpoHyperparams {
    pub fn rlas() -> Self {
        Self {
            action_space: ActionSpaceKind::Rlas,
            learning_rate: 7.61e-05,
            batch_size: 530,
            n_epochs: 10,
            gamma: 1.0,
            gae_lambda: 0.95,
            clip_range: 0.2,
            vf_coef: 0.286954,
            ent_coef: 0.0,
            features_dim: 512,
            activation: Activation::Tanh,
            policy_net: NetArch { layers: 3, units: 256 },
            value_net: NetArch { layers: 4, units: 256 },
        }
    }

    pub fn rlags() -> Self {
        Self {
            action_space: ActionSpaceKind::Rlags,
            learning_rate: 0.000125,
            batch_size: 411,
            n_epochs: 10,
            gamma: 0.99,
            gae_lambda: 0.9,
            clip_range: 0.3,
            vf_coef: 0.317708,
            ent_coef: 0.0,
            features_dim: 256,
            activation: Activation::Relu,
            policy_net: NetArch { layers: 1, units: 512 },
            value_net: NetArch { layers: 3, units: 512 },
        }
    }

    pub fn preset(kind: ActionSpaceKind) -> Self {
        match kind {
            ActionSpaceKind::Rlas => Self::rlas(),
            ActionSpaceKind::Rlags => Self::rlags(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("hyperparameters always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for p in [PpoHyperparams::rlas(), PpoHyperparams::rlags()] {
            assert_eq!(PpoHyperparams::from_toml_str(&p.to_toml_string()).unwrap(), p);
        }
    }
}
