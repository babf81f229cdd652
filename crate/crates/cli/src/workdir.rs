//! Working-directory layout, version 1:
//!
//! ```text
//! workdir.json         {"version": 1}
//! graph.json           merged, deduplicated knowledge graph        (kg build)
//! transe.ckpt          translation embeddings                      (kg transe)
//! transe_log.jsonl     per-epoch probe loss                        (kg transe)
//! pruned.json          {"pi": n, "graph": ...}                     (distill prune)
//! metagraphs.jsonl     one meta-graph per candidate pair           (distill build)
//! model.ckpt           re-ranker config, vocabulary and weights    (train)
//! train_log.jsonl      per-epoch training log                      (train)
//! run.trec             re-ranked evaluation candidates             (rerank)
//! metrics.json         MRR@10, MAP@10, MAP@30                      (eval)
//! stats.json           meta-graph edge count and score             (stats)
//! stamps/<stage>.stamp input hash and output hashes of each stage
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Graph,
    Transe,
    TranseLog,
    Pruned,
    MetaGraphs,
    Model,
    TrainLog,
    Run,
    Metrics,
    Stats,
}

impl Artifact {
    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::Graph => "graph.json",
            Artifact::Transe => "transe.ckpt",
            Artifact::TranseLog => "transe_log.jsonl",
            Artifact::Pruned => "pruned.json",
            Artifact::MetaGraphs => "metagraphs.jsonl",
            Artifact::Model => "model.ckpt",
            Artifact::TrainLog => "train_log.jsonl",
            Artifact::Run => "run.trec",
            Artifact::Metrics => "metrics.json",
            Artifact::Stats => "stats.json",
        }
    }

    /// Command that writes this artifact.
    pub fn producer(self) -> &'static str {
        match self {
            Artifact::Graph => "kg build",
            Artifact::Transe | Artifact::TranseLog => "kg transe",
            Artifact::Pruned => "distill prune",
            Artifact::MetaGraphs => "distill build",
            Artifact::Model | Artifact::TrainLog => "train",
            Artifact::Run => "rerank",
            Artifact::Metrics => "eval",
            Artifact::Stats => "stats",
        }
    }
}

#[derive(Serialize, Deserialize, PartialEq)]
struct Stamp {
    key: String,
    outputs: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Layout {
    version: u32,
}

pub struct Workdir {
    root: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl Workdir {
    /// Opens `root`, creating it if needed; refuses a different layout version.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("stamps")).map_err(|e| io_err(root, e))?;
        let marker = root.join("workdir.json");
        if marker.exists() {
            let text = fs::read_to_string(&marker).map_err(|e| io_err(&marker, e))?;
            let layout: Layout = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", marker.display())))?;
            if layout.version != LAYOUT_VERSION {
                return Err(CliError::Config(format!(
                    "workdir {} has layout version {}, expected {LAYOUT_VERSION}",
                    root.display(),
                    layout.version
                )));
            }
        } else {
            let body = serde_json::to_string(&Layout { version: LAYOUT_VERSION }).expect("layout serializes");
            fs::write(&marker, body + "\n").map_err(|e| io_err(&marker, e))?;
        }
        Ok(Workdir { root: root.to_path_buf() })
    }

    pub fn path(&self, a: Artifact) -> PathBuf {
        self.root.join(a.file_name())
    }

    /// Contents of an upstream artifact, or an error naming its producer.
    pub fn read(&self, a: Artifact) -> Result<String> {
        let path = self.path(a);
        if !path.is_file() {
            return Err(CliError::MissingArtifact {
                artifact: path.display().to_string(),
                command: a.producer(),
            });
        }
        fs::read_to_string(&path).map_err(|e| io_err(&path, e))
    }

    /// Writes through a temporary file so a killed run never leaves a
    /// truncated artifact behind.
    pub fn write(&self, a: Artifact, body: &str) -> Result<()> {
        let path = self.path(a);
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, body).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.root.join("stamps").join(format!("{}.stamp", stage.replace(' ', "_")))
    }

    fn output_hashes(&self, outputs: &[Artifact]) -> Option<BTreeMap<String, String>> {
        outputs
            .iter()
            .map(|&a| {
                let bytes = fs::read(self.path(a)).ok()?;
                Some((a.file_name().to_string(), sha256_hex(&bytes)))
            })
            .collect()
    }

    /// True when the stamp for `stage` records `key` and every output still
    /// has the recorded content.
    pub fn is_fresh(&self, stage: &str, key: &str, outputs: &[Artifact]) -> bool {
        let Ok(text) = fs::read_to_string(self.stamp_path(stage)) else {
            return false;
        };
        let Ok(stamp) = serde_json::from_str::<Stamp>(&text) else {
            return false;
        };
        stamp.key == key && self.output_hashes(outputs).is_some_and(|h| h == stamp.outputs)
    }

    pub fn stamp(&self, stage: &str, key: &str, outputs: &[Artifact]) -> Result<()> {
        let outputs = self
            .output_hashes(outputs)
            .ok_or_else(|| CliError::Io(format!("stage {stage} did not write all of its outputs")))?;
        let body = serde_json::to_string_pretty(&Stamp { key: key.to_string(), outputs }).expect("stamp serializes");
        let path = self.stamp_path(stage);
        fs::write(&path, body + "\n").map_err(|e| io_err(&path, e))
    }
}

/// Hash of a stage's name, its effective settings and the bytes of each input.
pub struct StampKey {
    hasher: Sha256,
}

impl StampKey {
    pub fn new(stage: &str, settings: &impl Serialize) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(format!("stage {stage}\n"));
        hasher.update(serde_json::to_vec(settings).expect("settings serialize"));
        hasher.update(b"\n");
        StampKey { hasher }
    }

    pub fn input(mut self, label: &str, bytes: &[u8]) -> Self {
        self.hasher.update(format!("input {label} {}\n", sha256_hex(bytes)));
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamp_tracks_key_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::open(dir.path()).unwrap();
        let key = StampKey::new("eval", &1).input("run", b"x").finish();
        assert!(!wd.is_fresh("eval", &key, &[Artifact::Metrics]));
        wd.write(Artifact::Metrics, "{}").unwrap();
        wd.stamp("eval", &key, &[Artifact::Metrics]).unwrap();
        assert!(wd.is_fresh("eval", &key, &[Artifact::Metrics]));

        let other = StampKey::new("eval", &1).input("run", b"y").finish();
        assert!(!wd.is_fresh("eval", &other, &[Artifact::Metrics]));

        wd.write(Artifact::Metrics, "{\"edited\":true}").unwrap();
        assert!(!wd.is_fresh("eval", &key, &[Artifact::Metrics]));
    }

    #[test]
    fn missing_artifact_names_its_producer() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::open(dir.path()).unwrap();
        let err = wd.read(Artifact::MetaGraphs).unwrap_err();
        assert!(err.to_string().contains("kerm distill build"), "{err}");
    }

    #[test]
    fn other_layout_versions_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("workdir.json"), "{\"version\": 9}").unwrap();
        assert!(matches!(Workdir::open(dir.path()), Err(CliError::Config(_))));
    }
}
