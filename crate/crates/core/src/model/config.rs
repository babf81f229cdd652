use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which parts of the knowledge injector are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Injection plus graph propagation, text and knowledge interact.
    Full,
    /// Injection of static translation embeddings, no graph network.
    NoPropagation,
    /// Text and graph streams run side by side and meet only in the head.
    NoInteraction,
    /// Plain cross-encoder; injector layers run as ordinary transformer layers.
    Vanilla,
}

impl Mode {
    pub fn uses_gmn(self) -> bool {
        matches!(self, Mode::Full | Mode::NoInteraction)
    }

    pub fn injects(self) -> bool {
        matches!(self, Mode::Full | Mode::NoPropagation)
    }

    pub fn uses_knowledge(self) -> bool {
        self != Mode::Vanilla
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "no_propagation" => Ok(Mode::NoPropagation),
            "no_interaction" => Ok(Mode::NoInteraction),
            "vanilla" => Ok(Mode::Vanilla),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KermConfig {
    /// Plain transformer layers before the injector (N).
    pub text_layers: usize,
    /// Knowledge injector layers (M).
    pub injector_layers: usize,
    /// Graph network rounds per injector layer (K).
    pub gmn_layers: usize,
    pub hidden: usize,
    pub ffn: usize,
    /// Must equal the translation embedding dimension.
    pub entity_dim: usize,
    pub heads: usize,
    pub max_len: usize,
    pub mode: Mode,
    /// One set of graph attention maps for all injector layers instead of one per layer.
    #[serde(default)]
    pub share_gmn: bool,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl Default for KermConfig {
    fn default() -> Self {
        KermConfig {
            text_layers: 3,
            injector_layers: 2,
            gmn_layers: 2,
            hidden: 64,
            ffn: 128,
            entity_dim: 32,
            heads: 4,
            max_len: 128,
            mode: Mode::Full,
            share_gmn: false,
            ln_eps: default_ln_eps(),
        }
    }
}

impl KermConfig {
    pub fn total_layers(&self) -> usize {
        self.text_layers + self.injector_layers
    }

    pub fn is_injector_layer(&self, layer: usize) -> bool {
        layer >= self.text_layers && self.mode.uses_knowledge()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.ffn == 0 || self.entity_dim == 0 || self.heads == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.total_layers() == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if self.mode.uses_gmn() && self.gmn_layers == 0 {
            return Err(Error::Config("graph network needs at least one round in this mode".into()));
        }
        if self.max_len < 4 {
            return Err(Error::Config("max_len must leave room for [CLS] q [SEP] [SEP]".into()));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(KermConfig::default().validate().is_ok());
        let bad = KermConfig { hidden: 10, heads: 4, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = KermConfig { gmn_layers: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let ok = KermConfig { gmn_layers: 0, mode: Mode::NoPropagation, ..Default::default() };
        assert!(ok.validate().is_ok());
        assert_eq!("no_interaction".parse::<Mode>().unwrap(), Mode::NoInteraction);
        assert!("fancy".parse::<Mode>().is_err());
    }
}
