use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};
use crate::numerics::ParamStore;

use super::config::KermConfig;
use super::network::Kerm;
use super::vocab::Vocab;

const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: KermConfig,
    vocab: Vocab,
}

/// Trained re-ranker: architecture, vocabulary and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: KermConfig,
    pub vocab: Vocab,
    pub params: ParamStore,
}

impl ModelCheckpoint {
    pub fn model(&self) -> Result<Kerm> {
        Kerm::new(self.config.clone(), self.vocab.len())
    }

    /// A header line with config and vocabulary, then one line per parameter.
    pub fn to_text(&self) -> String {
        let header = Header {
            version: VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        out.push_str(&self.params.to_checkpoint());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let header: Header =
            serde_json::from_str(first).map_err(|e| Error::parse("model checkpoint", 1, e.to_string()))?;
        if header.version != VERSION {
            return Err(Error::parse(
                "model checkpoint",
                1,
                format!("unsupported version {}", header.version),
            ));
        }
        let params = ParamStore::from_checkpoint(rest)?;
        let ck = ModelCheckpoint {
            config: header.config,
            vocab: header.vocab,
            params,
        };
        ck.model()?.check_params(&ck.params)?;
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?)
    }
}
