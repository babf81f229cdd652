use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use kerm::distill::{
    meta_graph_stats, parse_meta_graphs, prune_graph, write_meta_graphs, EntityLexicon, MetaGraph, MetaGraphBuilder,
    MetaGraphRecord, PrunedGraph,
};
use kerm::embed::{train_transe, KgEmbeddings, WordEmbeddingTable};
use kerm::kg::{KnowledgeGraph, RelationMergeMap};
use kerm::model::{Kerm, ModelCheckpoint, Mode, Vocab};
use kerm::rank::{
    build_examples, build_meta_graphs, evaluate, index_meta_graphs, parse_id_text, prepare_examples, rerank, train,
    PreparedQuery, Qrels, RunFile,
};
use kerm::synth::{generate, SynthConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::workdir::{Artifact, StampKey, Workdir};

pub struct Context {
    pub cfg: PipelineConfig,
    pub wd: Workdir,
    pub force: bool,
}

/// Raw bytes of an input file plus a display name for error messages.
struct Input {
    name: String,
    text: String,
}

fn read_input(path: &Path) -> Result<Input> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(Input { name: path.display().to_string(), text })
}

impl Context {
    pub fn open(cfg: PipelineConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        let wd = Workdir::open(&cfg.paths.workdir)?;
        Ok(Context { cfg, wd, force })
    }

    /// Runs `body` unless the stamp for `stage` already covers `key`.
    fn stage(&self, stage: &str, key: String, outputs: &[Artifact], body: impl FnOnce() -> Result<()>) -> Result<()> {
        if !self.force && self.wd.is_fresh(stage, &key, outputs) {
            println!("{stage}: up to date");
            return Ok(());
        }
        body()?;
        self.wd.stamp(stage, &key, outputs)?;
        let written: Vec<&str> = outputs.iter().map(|a| a.file_name()).collect();
        println!("{stage}: wrote {}", written.join(", "));
        Ok(())
    }

    fn graph(&self) -> Result<(String, KnowledgeGraph)> {
        let text = self.wd.read(Artifact::Graph)?;
        let g = KnowledgeGraph::from_json(&text)?;
        Ok((text, g))
    }

    fn embeddings(&self, g: &KnowledgeGraph) -> Result<(String, KgEmbeddings)> {
        let text = self.wd.read(Artifact::Transe)?;
        let emb = KgEmbeddings::from_checkpoint(&text, g)?;
        Ok((text, emb))
    }

    fn meta_graphs(&self) -> Result<(String, Vec<MetaGraphRecord>)> {
        let text = self.wd.read(Artifact::MetaGraphs)?;
        let records = parse_meta_graphs(&text, Artifact::MetaGraphs.file_name())?;
        Ok((text, records))
    }

    pub fn kg_build(&self) -> Result<()> {
        let triples = read_input(&self.cfg.paths.triples)?;
        let map = self.cfg.paths.relation_map.as_deref().map(read_input).transpose()?;
        let mut key = StampKey::new("kg build", &self.cfg.kg).input("triples", triples.text.as_bytes());
        if let Some(m) = &map {
            key = key.input("relation_map", m.text.as_bytes());
        }
        self.stage("kg build", key.finish(), &[Artifact::Graph], || {
            let merge = match &map {
                Some(m) => RelationMergeMap::from_json(&m.text, self.cfg.kg.merged_relations, self.cfg.kg.strict)?,
                None => RelationMergeMap::conceptnet(),
            };
            let g = KnowledgeGraph::parse_tsv(&triples.text, &triples.name, &merge)?;
            let s = g.stats();
            log::info!(
                "graph: {} entities, {} relations, {} triplets, max out-degree {}",
                s.entities,
                s.relations,
                s.triplets,
                s.max_out_degree
            );
            self.wd.write(Artifact::Graph, &g.to_json())
        })
    }

    pub fn kg_transe(&self) -> Result<()> {
        let (graph_text, g) = self.graph()?;
        let key = StampKey::new("kg transe", &self.cfg.transe).input("graph", graph_text.as_bytes()).finish();
        self.stage("kg transe", key, &[Artifact::Transe, Artifact::TranseLog], || {
            let out = train_transe(&g, &self.cfg.transe)?;
            let mut log = String::new();
            for (epoch, loss) in out.epoch_losses.iter().enumerate() {
                log.push_str(&json!({ "epoch": epoch, "loss": loss }).to_string());
                log.push('\n');
            }
            if let (Some(first), Some(last)) = (out.epoch_losses.first(), out.epoch_losses.last()) {
                log::info!("transe: probe loss {first:.4} -> {last:.4}");
            }
            self.wd.write(Artifact::Transe, &out.embeddings.to_checkpoint(&g))?;
            self.wd.write(Artifact::TranseLog, &log)
        })
    }

    pub fn distill_prune(&self) -> Result<()> {
        let (graph_text, g) = self.graph()?;
        let (emb_text, emb) = self.embeddings(&g)?;
        let pi = self.cfg.distill.pi;
        let key = StampKey::new("distill prune", &pi)
            .input("graph", graph_text.as_bytes())
            .input("transe", emb_text.as_bytes())
            .finish();
        self.stage("distill prune", key, &[Artifact::Pruned], || {
            let pg = prune_graph(&g, &emb, pi)?;
            log::info!("pruned {} -> {} triplets at pi={pi}", g.triplets().len(), pg.graph().triplets().len());
            let graph: serde_json::Value = serde_json::from_str(&pg.graph().to_json()).map_err(kerm::Error::from)?;
            self.wd.write(Artifact::Pruned, &(json!({ "pi": pi, "graph": graph }).to_string() + "\n"))
        })
    }

    fn pruned(&self) -> Result<(String, PrunedGraph)> {
        #[derive(Deserialize)]
        struct Dump {
            pi: usize,
            graph: serde_json::Value,
        }
        let text = self.wd.read(Artifact::Pruned)?;
        let dump: Dump = serde_json::from_str(&text).map_err(kerm::Error::from)?;
        let g = KnowledgeGraph::from_json(&dump.graph.to_string())?;
        Ok((text, PrunedGraph::from_graph(g, dump.pi)?))
    }

    pub fn distill_build(&self) -> Result<()> {
        let (pruned_text, pg) = self.pruned()?;
        let p = &self.cfg.paths;
        let words = read_input(&p.word_vectors)?;
        let queries = read_input(&p.queries)?;
        let collection = read_input(&p.collection)?;
        let train_run = read_input(&p.train_candidates)?;
        let eval_run = read_input(&p.eval_candidates)?;
        let mg_cfg = self.cfg.distill.meta_graph();
        let key = StampKey::new("distill build", &mg_cfg)
            .input("pruned", pruned_text.as_bytes())
            .input("word_vectors", words.text.as_bytes())
            .input("queries", queries.text.as_bytes())
            .input("collection", collection.text.as_bytes())
            .input("train_candidates", train_run.text.as_bytes())
            .input("eval_candidates", eval_run.text.as_bytes())
            .finish();
        self.stage("distill build", key, &[Artifact::MetaGraphs], || {
            let table = WordEmbeddingTable::parse(&words.text, &words.name)?;
            let queries = parse_id_text(&queries.text, &queries.name)?;
            let collection = parse_id_text(&collection.text, &collection.name)?;
            let lexicon = EntityLexicon::from_graph(pg.graph());
            let builder = MetaGraphBuilder { pruned: &pg, lexicon: &lexicon, words: &table, config: mg_cfg };
            let mut records: BTreeMap<(String, String), MetaGraph> = BTreeMap::new();
            for run in [&train_run, &eval_run] {
                let run = RunFile::parse(&run.text, &run.name)?;
                let examples = build_examples(&queries, &collection, &run, &Qrels::new())?;
                let missing: Vec<_> = examples
                    .iter()
                    .flat_map(|ex| ex.candidates.iter().map(move |c| (ex.qid.clone(), c.pid.clone())))
                    .filter(|k| !records.contains_key(k))
                    .collect();
                if missing.is_empty() {
                    continue;
                }
                for r in build_meta_graphs(&builder, &examples)? {
                    records.entry((r.qid, r.pid)).or_insert(r.meta);
                }
            }
            let records: Vec<MetaGraphRecord> = records
                .into_iter()
                .map(|((qid, pid), meta)| MetaGraphRecord { qid, pid, meta })
                .collect();
            let truncated = records.iter().filter(|r| r.meta.truncated).count();
            log::info!("{} meta-graphs, {truncated} truncated by the frontier cap", records.len());
            self.wd.write(Artifact::MetaGraphs, &write_meta_graphs(&records))
        })
    }

    /// Tokenized pairs and laid-out knowledge for every query of `run`.
    fn prepare(
        &self,
        run: &Input,
        vocab: &Vocab,
        emb: &KgEmbeddings,
        metas: Vec<MetaGraphRecord>,
        max_len: usize,
        qrels: &Qrels,
    ) -> Result<Vec<PreparedQuery>> {
        let queries = read_input(&self.cfg.paths.queries)?;
        let collection = read_input(&self.cfg.paths.collection)?;
        let queries = parse_id_text(&queries.text, &queries.name)?;
        let collection = parse_id_text(&collection.text, &collection.name)?;
        let run = RunFile::parse(&run.text, &run.name)?;
        let examples = build_examples(&queries, &collection, &run, qrels)?;
        Ok(prepare_examples(&examples, vocab, emb, &index_meta_graphs(metas), max_len)?)
    }

    pub fn train(&self) -> Result<()> {
        let (graph_text, g) = self.graph()?;
        let (emb_text, emb) = self.embeddings(&g)?;
        let (mg_text, metas) = self.meta_graphs()?;
        let p = &self.cfg.paths;
        let queries = read_input(&p.queries)?;
        let collection = read_input(&p.collection)?;
        let train_run = read_input(&p.train_candidates)?;
        let qrels_in = read_input(&p.qrels)?;
        #[derive(Serialize)]
        struct Settings<'a> {
            model: &'a kerm::model::KermConfig,
            train: &'a kerm::rank::TrainConfig,
            init_seed: u64,
        }
        let settings = Settings { model: &self.cfg.model, train: &self.cfg.train, init_seed: self.cfg.init_seed };
        let key = StampKey::new("train", &settings)
            .input("graph", graph_text.as_bytes())
            .input("transe", emb_text.as_bytes())
            .input("metagraphs", mg_text.as_bytes())
            .input("queries", queries.text.as_bytes())
            .input("collection", collection.text.as_bytes())
            .input("train_candidates", train_run.text.as_bytes())
            .input("qrels", qrels_in.text.as_bytes())
            .finish();
        self.stage("train", key, &[Artifact::Model, Artifact::TrainLog], || {
            let q = parse_id_text(&queries.text, &queries.name)?;
            let c = parse_id_text(&collection.text, &collection.name)?;
            let vocab = Vocab::build(q.values().chain(c.values()).map(String::as_str));
            let qrels = Qrels::parse(&qrels_in.text, &qrels_in.name)?;
            let data = self.prepare(&train_run, &vocab, &emb, metas, self.cfg.model.max_len, &qrels)?;
            let model = Kerm::new(self.cfg.model.clone(), vocab.len())?;
            let mut log = String::new();
            let out = train(&model, model.init_params(self.cfg.init_seed), &data, &self.cfg.train, |e, _| {
                log::info!("epoch {} loss {:.5} steps {} skipped {}", e.epoch, e.mean_loss, e.steps, e.skipped_queries);
                log.push_str(&e.to_json_line());
                log.push('\n');
                Ok(true)
            })?;
            let ckpt = ModelCheckpoint { config: self.cfg.model.clone(), vocab, params: out.params };
            self.wd.write(Artifact::Model, &ckpt.to_text())?;
            self.wd.write(Artifact::TrainLog, &log)
        })
    }

    pub fn rerank(&self) -> Result<()> {
        let model_text = self.wd.read(Artifact::Model)?;
        let (graph_text, g) = self.graph()?;
        let (emb_text, emb) = self.embeddings(&g)?;
        let (mg_text, metas) = self.meta_graphs()?;
        let p = &self.cfg.paths;
        let queries = read_input(&p.queries)?;
        let collection = read_input(&p.collection)?;
        let eval_run = read_input(&p.eval_candidates)?;
        let key = StampKey::new("rerank", &())
            .input("model", model_text.as_bytes())
            .input("graph", graph_text.as_bytes())
            .input("transe", emb_text.as_bytes())
            .input("metagraphs", mg_text.as_bytes())
            .input("queries", queries.text.as_bytes())
            .input("collection", collection.text.as_bytes())
            .input("eval_candidates", eval_run.text.as_bytes())
            .finish();
        self.stage("rerank", key, &[Artifact::Run], || {
            let ckpt = ModelCheckpoint::from_text(&model_text)?;
            let model = ckpt.model()?;
            let data = self.prepare(&eval_run, &ckpt.vocab, &emb, metas, ckpt.config.max_len, &Qrels::new())?;
            let tag = format!("kerm-{}", mode_name(ckpt.config.mode));
            let run = rerank(&model, &ckpt.params, &data, &tag)?;
            self.wd.write(Artifact::Run, &run.to_text())
        })
    }

    pub fn eval(&self) -> Result<()> {
        let run_text = self.wd.read(Artifact::Run)?;
        let qrels_in = read_input(&self.cfg.paths.qrels)?;
        let key = StampKey::new("eval", &())
            .input("run", run_text.as_bytes())
            .input("qrels", qrels_in.text.as_bytes())
            .finish();
        self.stage("eval", key, &[Artifact::Metrics], || {
            let run = RunFile::parse(&run_text, Artifact::Run.file_name())?;
            let qrels = Qrels::parse(&qrels_in.text, &qrels_in.name)?;
            let report = evaluate(&run, &qrels)?;
            let body = serde_json::to_string_pretty(&report).map_err(kerm::Error::from)?;
            self.wd.write(Artifact::Metrics, &(body + "\n"))
        })?;
        let report: serde_json::Value =
            serde_json::from_str(&self.wd.read(Artifact::Metrics)?).map_err(kerm::Error::from)?;
        println!("queries  {}", report["queries"]);
        for m in ["mrr@10", "map@10", "map@30"] {
            println!("{m:<8} {:.4}", report[m].as_f64().unwrap_or(f64::NAN));
        }
        Ok(())
    }

    pub fn stats(&self) -> Result<()> {
        let (graph_text, g) = self.graph()?;
        let (emb_text, emb) = self.embeddings(&g)?;
        let (mg_text, metas) = self.meta_graphs()?;
        let key = StampKey::new("stats", &())
            .input("graph", graph_text.as_bytes())
            .input("transe", emb_text.as_bytes())
            .input("metagraphs", mg_text.as_bytes())
            .finish();
        self.stage("stats", key, &[Artifact::Stats], || {
            let graphs: Vec<MetaGraph> = metas.into_iter().map(|r| r.meta).collect();
            let s = meta_graph_stats(&graphs, &emb)?;
            let body = json!({ "graph": g.stats(), "meta_graphs": s });
            self.wd.write(Artifact::Stats, &(serde_json::to_string_pretty(&body).map_err(kerm::Error::from)? + "\n"))
        })?;
        let report: serde_json::Value =
            serde_json::from_str(&self.wd.read(Artifact::Stats)?).map_err(kerm::Error::from)?;
        let mg = &report["meta_graphs"];
        println!("{:<12} {:>8} {:>12}", "meta-graphs", "#edges", "edge score");
        let score = mg["avg_edge_score"].as_f64().map_or_else(|| "-".to_string(), |s| format!("{s:.4}"));
        println!("{:<12} {:>8.2} {:>12}", mg["graphs"].as_u64().unwrap_or(0), mg["avg_edge_count"].as_f64().unwrap_or(0.0), score);
        Ok(())
    }

    pub fn pipeline(&self) -> Result<()> {
        self.kg_build()?;
        self.kg_transe()?;
        self.distill_prune()?;
        self.distill_build()?;
        self.train()?;
        self.rerank()?;
        self.eval()?;
        self.stats()
    }
}

fn mode_name(mode: Mode) -> String {
    serde_json::to_value(mode).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Config written next to a synthetic corpus; sized to run in seconds.
const SYNTH_CONFIG: &str = r#"init_seed = 1

[paths]
triples = "triples.tsv"
word_vectors = "words.txt"
queries = "queries.tsv"
collection = "collection.tsv"
qrels = "qrels.txt"
train_candidates = "candidates.run"
eval_candidates = "candidates.run"
workdir = "work"

[transe]
dim = 16
margin = 1.0
learning_rate = 0.01
epochs = 100
negatives = 1
seed = 7

[distill]
pi = 20
max_hops = 2
max_frontier = 1000

[model]
text_layers = 1
injector_layers = 2
gmn_layers = 2
hidden = 16
ffn = 32
entity_dim = 16
heads = 2
max_len = 64
mode = "full"

[train]
lr_encoder = 0.003
lr_injector = 0.003
epochs = 4
n_neg = 9
queries_per_step = 4
seed = 17
"#;

pub fn synth(out: &Path, cfg: &SynthConfig) -> Result<()> {
    let corpus = generate(cfg)?;
    corpus.write_dir(out)?;
    let path = out.join("kerm.toml");
    fs::write(&path, SYNTH_CONFIG).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    println!("wrote {} queries and {} triplets to {}", corpus.queries.len(), corpus.triplet_count(), out.display());
    Ok(())
}
