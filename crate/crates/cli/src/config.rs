use std::path::{Path, PathBuf};

use kerm::distill::{MetaGraphConfig, DEFAULT_PI};
use kerm::embed::TransEConfig;
use kerm::kg::DEFAULT_MERGED_RELATIONS;
use kerm::model::KermConfig;
use kerm::rank::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Input files and the working directory. Relative paths resolve against
/// the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub triples: PathBuf,
    /// JSON `{raw: merged}` relation map; the bundled ConceptNet map when absent.
    #[serde(default)]
    pub relation_map: Option<PathBuf>,
    pub word_vectors: PathBuf,
    pub queries: PathBuf,
    pub collection: PathBuf,
    pub qrels: PathBuf,
    pub train_candidates: PathBuf,
    pub eval_candidates: PathBuf,
    pub workdir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgSection {
    /// Merged relation count a custom `relation_map` must produce.
    pub merged_relations: usize,
    /// Reject raw relations missing from the map instead of keeping them.
    pub strict: bool,
}

impl Default for KgSection {
    fn default() -> Self {
        KgSection { merged_relations: DEFAULT_MERGED_RELATIONS, strict: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub pi: usize,
    pub max_hops: usize,
    pub max_frontier: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        let mg = MetaGraphConfig::default();
        DistillSection { pi: DEFAULT_PI, max_hops: mg.max_hops, max_frontier: mg.max_frontier }
    }
}

impl DistillSection {
    pub fn meta_graph(&self) -> MetaGraphConfig {
        MetaGraphConfig { max_hops: self.max_hops, max_frontier: self.max_frontier }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for the re-ranker's initial weights.
    #[serde(default = "default_init_seed")]
    pub init_seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub kg: KgSection,
    #[serde(default)]
    pub transe: TransEConfig,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub model: KermConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_init_seed() -> u64 {
    1
}

impl PipelineConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Every input file exists and every section is internally consistent.
    pub fn validate(&self) -> Result<(), CliError> {
        for (name, path) in self.paths.inputs() {
            if !path.is_file() {
                return Err(CliError::Config(format!("paths.{name}: {} does not exist", path.display())));
            }
        }
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.distill.pi == 0 || self.distill.max_hops == 0 || self.distill.max_frontier == 0 {
            return Err(CliError::Config("distill.pi, max_hops and max_frontier must be positive".into()));
        }
        if self.model.entity_dim != self.transe.dim {
            return Err(CliError::Config(format!(
                "model.entity_dim ({}) must equal transe.dim ({})",
                self.model.entity_dim, self.transe.dim
            )));
        }
        Ok(())
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.triples);
        if let Some(p) = self.relation_map.as_mut() {
            fix(p);
        }
        fix(&mut self.word_vectors);
        fix(&mut self.queries);
        fix(&mut self.collection);
        fix(&mut self.qrels);
        fix(&mut self.train_candidates);
        fix(&mut self.eval_candidates);
        fix(&mut self.workdir);
    }

    pub fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut out = vec![
            ("triples", self.triples.as_path()),
            ("word_vectors", &self.word_vectors),
            ("queries", &self.queries),
            ("collection", &self.collection),
            ("qrels", &self.qrels),
            ("train_candidates", &self.train_candidates),
            ("eval_candidates", &self.eval_candidates),
        ];
        if let Some(p) = &self.relation_map {
            out.push(("relation_map", p));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
triples = "t.tsv"
word_vectors = "w.txt"
queries = "q.tsv"
collection = "c.tsv"
qrels = "qrels.txt"
train_candidates = "train.run"
eval_candidates = "/abs/eval.run"
workdir = "work"
"#;

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let cfg = PipelineConfig::parse(MINIMAL, Path::new("/data/exp")).unwrap();
        assert_eq!(cfg.paths.triples, Path::new("/data/exp/t.tsv"));
        assert_eq!(cfg.paths.eval_candidates, Path::new("/abs/eval.run"));
        assert_eq!(cfg.distill, DistillSection::default());
        assert_eq!(cfg.model, KermConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[distill]\npie = 3\n");
        assert!(matches!(PipelineConfig::parse(&text, Path::new(".")), Err(CliError::Config(_))));
    }

    #[test]
    fn missing_inputs_fail_validation() {
        let cfg = PipelineConfig::parse(MINIMAL, Path::new("/nonexistent")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("paths.triples"), "{err}");
    }
}
