//! Synthetic corpora with a planted knowledge-bridge relevance signal.
//!
//! Every query mentions a source entity. Its single relevant passage mentions
//! an entity one or two hops away in the graph; every other candidate
//! mentions the target of a different query or a decoy entity, neither of
//! which the source can reach. Passages are otherwise drawn from the same
//! filler distribution, so text alone says little about which candidate is
//! relevant.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embed::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationMergeMap};
use crate::rank::{write_id_text, Qrels, RunFile};

const FILLER: &[&str] = &[
    "the", "a", "about", "report", "notes", "study", "people", "often", "during", "after", "before", "value", "common",
    "usually", "describes", "general", "result", "method", "system", "found", "may", "with", "from", "into", "over",
    "between", "known", "early", "later", "small", "large", "part", "type", "case", "point", "simple", "many", "most",
    "also", "only",
];

const RELATIONS: &[&str] = &["RelatedTo", "IsA", "PartOf", "UsedFor", "AtLocation", "Causes", "HasProperty"];

const CONSONANTS: &[u8] = b"bdfgklmnprtvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub queries: usize,
    /// Candidates per query, one of them relevant.
    pub candidates: usize,
    /// Negatives mention targets of other queries in the same block of
    /// `group_size` consecutive queries, or that block's decoys, so separate
    /// blocks share no entity tokens in their candidate lists.
    pub group_size: usize,
    /// Graph entities per block that only ever occur in negatives.
    pub decoys_per_group: usize,
    /// Total triplet count; triplets among entities that never occur in
    /// text fill the graph up to it.
    pub triplets: usize,
    /// Fraction of queries whose target is two hops from the source.
    pub two_hop_fraction: f64,
    pub word_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            queries: 20,
            candidates: 10,
            group_size: 20,
            decoys_per_group: 0,
            triplets: 100,
            two_hop_fraction: 0.5,
            word_dim: 16,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// `head<TAB>relation<TAB>tail` with ConceptNet relation names.
    pub triples: String,
    pub words: WordEmbeddingTable,
    pub queries: BTreeMap<String, String>,
    pub collection: BTreeMap<String, String>,
    pub candidates: RunFile,
    pub qrels: Qrels,
}

impl SynthCorpus {
    pub fn knowledge_graph(&self) -> Result<KnowledgeGraph> {
        KnowledgeGraph::parse_tsv(&self.triples, "synthetic triples", &RelationMergeMap::conceptnet())
    }

    pub fn triplet_count(&self) -> usize {
        self.triples.lines().count()
    }

    /// Queries whose id is in `qids`, with their candidates and judgments.
    pub fn subset(&self, qids: &BTreeSet<String>) -> Result<(RunFile, Qrels)> {
        let mut scores = BTreeMap::new();
        let mut qrels = Qrels::new();
        for (qid, rows) in self.candidates.per_query() {
            if !qids.contains(qid) {
                continue;
            }
            scores.insert(qid.to_string(), rows.iter().map(|r| (r.pid.clone(), r.score)).collect());
            for r in rows {
                let g = self.qrels.grade(qid, &r.pid);
                if g != 0 {
                    qrels.insert(qid, &r.pid, g);
                }
            }
        }
        Ok((RunFile::from_scores(scores, "bm25")?, qrels))
    }

    /// Writes `triples.tsv`, `words.txt`, `queries.tsv`, `collection.tsv`,
    /// `candidates.run` and `qrels.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("triples.tsv", self.triples.clone()),
            ("words.txt", self.words.to_text()),
            ("queries.tsv", write_id_text(&self.queries)),
            ("collection.tsv", write_id_text(&self.collection)),
            ("candidates.run", self.candidates.to_text()),
            ("qrels.txt", self.qrels.to_text()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn entity_names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut w = String::new();
        for _ in 0..3 {
            w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
            w.push(*VOWELS.choose(rng).expect("non-empty") as char);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn fillers(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<&'static str> {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *FILLER.choose(rng).expect("non-empty")).collect()
}

fn with_entity(rng: &mut ChaCha8Rng, entity: &str, min: usize, max: usize) -> String {
    let mut words: Vec<&str> = fillers(rng, min, max);
    let at = rng.random_range(0..=words.len());
    words.insert(at, entity);
    words.join(" ")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.queries < 2 || cfg.candidates < 2 || cfg.group_size < 2 || cfg.word_dim == 0 {
        return Err(Error::Config("synthetic corpus needs at least two queries and two candidates".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let groups = cfg.queries.div_ceil(cfg.group_size);
    let n_noise = (cfg.triplets / 2).max(4);
    let names = entity_names(cfg.queries * 4 + groups * cfg.decoys_per_group + n_noise, &mut rng);
    let (linked, rest) = names.split_at(cfg.queries * 4);
    let (decoys, noise) = rest.split_at(groups * cfg.decoys_per_group);

    let mut triples = BTreeSet::new();
    let rel = |rng: &mut ChaCha8Rng| *RELATIONS.choose(rng).expect("non-empty");
    let mut sources = Vec::new();
    let mut targets = Vec::new();
    for q in 0..cfg.queries {
        let [x, b, y, side] = [0, 1, 2, 3].map(|i| linked[q * 4 + i].as_str());
        if rng.random_bool(cfg.two_hop_fraction.clamp(0.0, 1.0)) {
            triples.insert((x.to_string(), rel(&mut rng), b.to_string()));
            triples.insert((b.to_string(), rel(&mut rng), y.to_string()));
        } else {
            triples.insert((x.to_string(), rel(&mut rng), y.to_string()));
        }
        triples.insert((x.to_string(), rel(&mut rng), side.to_string()));
        sources.push(x);
        targets.push(y);
    }
    for d in decoys {
        let t = noise.choose(&mut rng).expect("noise pool is non-empty");
        triples.insert((d.clone(), rel(&mut rng), t.clone()));
    }
    let mut attempts = 0;
    while triples.len() < cfg.triplets && attempts < cfg.triplets * 50 {
        attempts += 1;
        let h = noise.choose(&mut rng).expect("noise pool is non-empty");
        let t = noise.choose(&mut rng).expect("noise pool is non-empty");
        if h != t {
            triples.insert((h.clone(), rel(&mut rng), t.clone()));
        }
    }
    let mut triple_text = String::new();
    for (h, r, t) in &triples {
        let _ = writeln!(triple_text, "{h}\t{r}\t{t}");
    }

    // entity words share one direction so the sentence carrying an entity is
    // the one closest to a query that carries one
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let d = cfg.word_dim;
    let mut u: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= norm);
    let mut pairs = Vec::new();
    for w in FILLER {
        let v = (0..d).map(|_| normal.sample(&mut rng) / (d as f64).sqrt()).collect();
        pairs.push((w.to_string(), v));
    }
    for w in linked.iter().chain(decoys) {
        let v = u.iter().map(|x| 3.0 * x + 0.3 * normal.sample(&mut rng) / (d as f64).sqrt()).collect();
        pairs.push((w.clone(), v));
    }
    let words = WordEmbeddingTable::from_pairs(d, pairs)?;

    let mut queries = BTreeMap::new();
    let mut collection = BTreeMap::new();
    let mut scores = BTreeMap::new();
    let mut qrels = Qrels::new();
    let width = cfg.queries.to_string().len();
    for q in 0..cfg.queries {
        let qid = format!("q{q:0width$}");
        queries.insert(qid.clone(), with_entity(&mut rng, sources[q], 2, 4));

        let g = q / cfg.group_size;
        let others = (g * cfg.group_size..((g + 1) * cfg.group_size).min(cfg.queries))
            .filter(|&o| o != q)
            .map(|o| targets[o]);
        let group_decoys = decoys[g * cfg.decoys_per_group..(g + 1) * cfg.decoys_per_group]
            .iter()
            .map(String::as_str);
        let pool: Vec<&str> = others.chain(group_decoys).collect();
        if pool.len() + 1 < cfg.candidates {
            return Err(Error::Config(format!(
                "query {qid} has {} negative entities for {} candidates",
                pool.len(),
                cfg.candidates
            )));
        }
        let mut mentions: Vec<(&str, bool)> = vec![(targets[q], true)];
        mentions.extend(pool.choose_multiple(&mut rng, cfg.candidates - 1).map(|&e| (e, false)));
        mentions.shuffle(&mut rng);

        let mut list = Vec::new();
        for (j, (target, relevant)) in mentions.into_iter().enumerate() {
            let pid = format!("{qid}p{j:02}");
            let mut sentences = vec![with_entity(&mut rng, target, 3, 5)];
            for _ in 0..rng.random_range(1..=2) {
                sentences.push(fillers(&mut rng, 4, 6).join(" "));
            }
            sentences.shuffle(&mut rng);
            collection.insert(pid.clone(), sentences.join(". ") + ".");
            if relevant {
                qrels.insert(&qid, &pid, 1);
            }
            list.push((pid, (cfg.candidates - j) as f64));
        }
        scores.insert(qid, list);
    }
    Ok(SynthCorpus {
        triples: triple_text,
        words,
        queries,
        collection,
        candidates: RunFile::from_scores(scores, "bm25")?,
        qrels,
    })
}
