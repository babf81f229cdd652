//! Translation-based knowledge-graph embeddings, triplet reliability scoring
//! and word-vector relevance between a query and a sentence.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_to_string, Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triplet};
use crate::numerics::{dot, Matrix};

/// Entity and relation vectors, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct KgEmbeddings {
    entities: Matrix,
    relations: Matrix,
}

impl KgEmbeddings {
    pub fn new(entities: Matrix, relations: Matrix) -> Result<Self> {
        if entities.cols() != relations.cols() {
            return Err(Error::Shape {
                op: "kg embeddings",
                left: entities.shape(),
                right: relations.shape(),
            });
        }
        if !entities.is_finite() || !relations.is_finite() {
            return Err(Error::Input("embeddings contain non-finite values".into()));
        }
        Ok(KgEmbeddings { entities, relations })
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn entity_matrix(&self) -> &Matrix {
        &self.entities
    }

    pub fn relation_matrix(&self) -> &Matrix {
        &self.relations
    }

    pub fn entity(&self, e: EntityId) -> Result<&[f64]> {
        if e.index() >= self.entities.rows() {
            return Err(Error::Lookup {
                kind: "entity",
                id: e.index(),
                len: self.entities.rows(),
            });
        }
        Ok(self.entities.row(e.index()))
    }

    pub fn relation(&self, r: RelationId) -> Result<&[f64]> {
        if r.index() >= self.relations.rows() {
            return Err(Error::Lookup {
                kind: "relation",
                id: r.index(),
                len: self.relations.rows(),
            });
        }
        Ok(self.relations.row(r.index()))
    }

    pub fn matches(&self, g: &KnowledgeGraph) -> bool {
        self.entities.rows() == g.entity_count() && self.relations.rows() == g.relation_count()
    }

    /// `||h + r - t||_2`, the quantity TransE training pulls down for true triplets.
    pub fn translation_distance(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
        let (h, r, t) = (self.entity(h)?, self.relation(r)?, self.entity(t)?);
        Ok(h.iter()
            .zip(r)
            .zip(t)
            .map(|((h, r), t)| (h + r - t).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    /// Versioned JSON checkpoint carrying vocabulary hashes of `g`.
    pub fn to_checkpoint(&self, g: &KnowledgeGraph) -> String {
        let ckpt = EmbeddingCheckpoint {
            version: CHECKPOINT_VERSION,
            dim: self.dim(),
            entity_vocab_sha256: vocab_hash(g.entities()),
            relation_vocab_sha256: vocab_hash(g.relations()),
            entities: self.entities.clone(),
            relations: self.relations.clone(),
        };
        serde_json::to_string(&ckpt).expect("checkpoint serializes")
    }

    /// Restores a checkpoint, refusing one written for a different vocabulary.
    pub fn from_checkpoint(text: &str, g: &KnowledgeGraph) -> Result<Self> {
        let ckpt: EmbeddingCheckpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!("unsupported embedding checkpoint version {}", ckpt.version)));
        }
        if ckpt.entity_vocab_sha256 != vocab_hash(g.entities())
            || ckpt.relation_vocab_sha256 != vocab_hash(g.relations())
        {
            return Err(Error::Input("embedding checkpoint was written for a different graph".into()));
        }
        if ckpt.entities.cols() != ckpt.dim || !KgEmbeddings::new(ckpt.entities.clone(), ckpt.relations.clone())?.matches(g) {
            return Err(Error::Input("embedding checkpoint dimensions do not match graph".into()));
        }
        KgEmbeddings::new(ckpt.entities, ckpt.relations)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EmbeddingCheckpoint {
    version: u32,
    dim: usize,
    entity_vocab_sha256: String,
    relation_vocab_sha256: String,
    entities: Matrix,
    relations: Matrix,
}

pub(crate) fn vocab_hash(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Reliability of a triplet: `E(h)·E(r) + E(h)·E(t) + E(r)·E(t)`.
pub fn triplet_reliability(emb: &KgEmbeddings, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
    let (hv, rv, tv) = (emb.entity(h)?, emb.relation(r)?, emb.entity(t)?);
    Ok(dot(hv, rv) + dot(hv, tv) + dot(rv, tv))
}

/// Reciprocal of [`triplet_reliability`]; undefined for non-positive reliability.
pub fn triplet_distance(emb: &KgEmbeddings, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
    let rel = triplet_reliability(emb, h, r, t)?;
    if rel <= 0.0 {
        return Err(Error::NonPositiveReliability(rel));
    }
    Ok(1.0 / rel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransEConfig {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives: usize,
    /// Fixed corruptions per triplet on which the epoch loss is measured.
    #[serde(default = "default_probe_negatives")]
    pub probe_negatives: usize,
    pub seed: u64,
}

fn default_probe_negatives() -> usize {
    4
}

impl Default for TransEConfig {
    fn default() -> Self {
        TransEConfig {
            dim: 32,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 100,
            negatives: 1,
            probe_negatives: default_probe_negatives(),
            seed: 7,
        }
    }
}

impl TransEConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.epochs == 0 || self.negatives == 0 || self.probe_negatives == 0 {
            return Err(Error::Config("TransE dim, epochs and negatives must be positive".into()));
        }
        if !(self.margin > 0.0 && self.learning_rate > 0.0) {
            return Err(Error::Config("TransE margin and learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TransEOutcome {
    pub embeddings: KgEmbeddings,
    /// Margin loss on the fixed probe sample after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// SGD on the margin ranking loss `max(0, γ + d(h,r,t) − d(h',r,t'))` with L2
/// translation distance. Each positive is paired with `negatives` corruptions
/// of either head or tail (fair coin), avoiding known triplets when possible.
/// Entity rows are projected back into the unit ball after every update.
///
/// The reported epoch loss is the margin loss over a fixed sample of
/// `probe_negatives` corruptions per triplet. An epoch that would raise it is
/// rolled back and the learning rate halved, so the series never increases.
pub fn train_transe(g: &KnowledgeGraph, cfg: &TransEConfig) -> Result<TransEOutcome> {
    cfg.validate()?;
    if g.is_empty() {
        return Err(Error::Config("cannot train embeddings on an empty graph".into()));
    }
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 6.0 / (d as f64).sqrt();
    let mut ent = Matrix::zeros(g.entity_count(), d);
    let mut rel = Matrix::zeros(g.relation_count(), d);
    for v in rel.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    for r in 0..rel.rows() {
        normalize_row(rel.row_mut(r), true);
    }
    for v in ent.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    for e in 0..ent.rows() {
        normalize_row(ent.row_mut(e), true);
    }

    let n_ent = g.entity_count() as u32;
    let mut order: Vec<Triplet> = g.triplets().to_vec();
    // fixed corruptions the epoch loss is measured on, so epochs compare like
    // with like instead of tracking the noise of freshly drawn negatives
    let probe: Vec<(Triplet, Triplet)> = order
        .iter()
        .flat_map(|pos| std::iter::repeat_n(*pos, cfg.probe_negatives))
        .map(|pos| (pos, corrupt(g, &pos, n_ent, &mut rng)))
        .collect();
    let probe_loss = |ent: &Matrix, rel: &Matrix| {
        let total: f64 = probe
            .iter()
            .map(|(p, n)| (cfg.margin + distance(ent, rel, p) - distance(ent, rel, n)).max(0.0))
            .sum();
        total / probe.len() as f64
    };
    let mut current = probe_loss(&ent, &rel);
    let mut lr = cfg.learning_rate;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; d];
    for _ in 0..cfg.epochs {
        let (saved_ent, saved_rel) = (ent.clone(), rel.clone());
        order.shuffle(&mut rng);
        for pos in &order {
            for _ in 0..cfg.negatives {
                let neg = corrupt(g, pos, n_ent, &mut rng);
                let d_pos = distance(&ent, &rel, pos);
                let d_neg = distance(&ent, &rel, &neg);
                if cfg.margin + d_pos - d_neg <= 0.0 {
                    continue;
                }
                // positive: descend on d_pos
                residual_direction(&ent, &rel, pos, d_pos, &mut grad);
                step(&mut ent, &mut rel, pos, &grad, -lr);
                // negative: ascend on d_neg
                residual_direction(&ent, &rel, &neg, d_neg, &mut grad);
                step(&mut ent, &mut rel, &neg, &grad, lr);
                for e in [pos.head, pos.tail, neg.head, neg.tail] {
                    normalize_row(ent.row_mut(e.index()), false);
                }
            }
        }
        let loss = probe_loss(&ent, &rel);
        if loss <= current {
            current = loss;
        } else {
            // backtrack: an epoch that raises the loss is undone and the step halved
            ent = saved_ent;
            rel = saved_rel;
            lr *= 0.5;
        }
        epoch_losses.push(current);
    }
    Ok(TransEOutcome {
        embeddings: KgEmbeddings::new(ent, rel)?,
        epoch_losses,
    })
}

fn corrupt(g: &KnowledgeGraph, pos: &Triplet, n_ent: u32, rng: &mut ChaCha8Rng) -> Triplet {
    let replace_head = rng.random_bool(0.5);
    let mut candidate = *pos;
    for _ in 0..16 {
        let e = EntityId(rng.random_range(0..n_ent));
        candidate = if replace_head {
            Triplet::new(e, pos.relation, pos.tail)
        } else {
            Triplet::new(pos.head, pos.relation, e)
        };
        if candidate != *pos && !g.contains(&candidate) {
            break;
        }
    }
    candidate
}

fn distance(ent: &Matrix, rel: &Matrix, t: &Triplet) -> f64 {
    let (h, r, tl) = (ent.row(t.head.index()), rel.row(t.relation.index()), ent.row(t.tail.index()));
    h.iter()
        .zip(r)
        .zip(tl)
        .map(|((h, r), t)| (h + r - t).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Gradient of `||h + r - t||` with respect to `h` (and `r`; `t` gets the negation).
fn residual_direction(ent: &Matrix, rel: &Matrix, t: &Triplet, dist: f64, out: &mut [f64]) {
    let (h, r, tl) = (ent.row(t.head.index()), rel.row(t.relation.index()), ent.row(t.tail.index()));
    let inv = if dist > 0.0 { 1.0 / dist } else { 0.0 };
    for (i, o) in out.iter_mut().enumerate() {
        *o = (h[i] + r[i] - tl[i]) * inv;
    }
}

fn step(ent: &mut Matrix, rel: &mut Matrix, t: &Triplet, grad: &[f64], lr: f64) {
    for (v, g) in ent.row_mut(t.head.index()).iter_mut().zip(grad) {
        *v += lr * g;
    }
    for (v, g) in rel.row_mut(t.relation.index()).iter_mut().zip(grad) {
        *v += lr * g;
    }
    for (v, g) in ent.row_mut(t.tail.index()).iter_mut().zip(grad) {
        *v -= lr * g;
    }
}

/// Scales to unit norm (`exact`) or only when the norm exceeds one.
fn normalize_row(row: &mut [f64], exact: bool) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 && (exact || norm > 1.0) {
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
}

/// Word vectors used for key-sentence selection.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    duplicates: Vec<(String, usize)>,
}

impl WordEmbeddingTable {
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (w, v) in pairs {
            if v.len() != dim {
                return Err(Error::Input(format!("vector for `{w}` has dimension {}, expected {dim}", v.len())));
            }
            vectors.insert(w.to_lowercase(), v);
        }
        Ok(WordEmbeddingTable {
            dim,
            vectors,
            duplicates: Vec::new(),
        })
    }

    /// Parses `word v1 .. vd` lines. A leading `count dim` header is detected
    /// by its two-column shape. Later duplicates replace earlier ones.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut dim: Option<usize> = None;
        let mut vectors = HashMap::new();
        let mut duplicates = Vec::new();
        let mut first = true;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if std::mem::take(&mut first) && fields.len() == 2 {
                if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                    if d == 0 {
                        return Err(Error::parse(source_name, lineno, "header declares dimension 0"));
                    }
                    dim = Some(d);
                    continue;
                }
            }
            let word = fields[0].to_lowercase();
            let values = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::parse(source_name, lineno, "invalid vector component"))?;
            if values.is_empty() {
                return Err(Error::parse(source_name, lineno, "word without vector"));
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::parse(
                        source_name,
                        lineno,
                        format!("dimension {} differs from {d}", values.len()),
                    ))
                }
                Some(_) => {}
            }
            if vectors.insert(word.clone(), values).is_some() {
                warn!("{source_name}:{lineno}: duplicate word `{word}`, keeping the later vector");
                duplicates.push((word, lineno));
            }
        }
        Ok(WordEmbeddingTable {
            dim: dim.unwrap_or(0),
            vectors,
            duplicates,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// `(word, line)` of every duplicate that replaced an earlier vector.
    pub fn duplicates(&self) -> &[(String, usize)] {
        &self.duplicates
    }

    /// Serializes with a `count dim` header, words sorted. The header keeps
    /// a numeric first word with a one-component vector from being read
    /// back as a header.
    pub fn to_text(&self) -> String {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        let mut out = String::new();
        if !words.is_empty() {
            out.push_str(&format!("{} {}\n", words.len(), self.dim));
        }
        for w in words {
            out.push_str(w);
            for v in &self.vectors[w] {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Mean vector over in-vocabulary tokens, `None` if all are unknown.
    pub fn mean_vector<S: AsRef<str>>(&self, tokens: &[S]) -> Option<Vec<f64>> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.get(t.as_ref()) {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return None;
        }
        for s in &mut sum {
            *s /= n as f64;
        }
        Some(sum)
    }
}

/// Dot product of the mean query vector and the mean sentence vector.
/// Unknown words are dropped; `None` when either side has no known word.
pub fn query_sentence_relevance<S: AsRef<str>, T: AsRef<str>>(
    table: &WordEmbeddingTable,
    query: &[S],
    sentence: &[T],
) -> Option<f64> {
    let q = table.mean_vector(query)?;
    let s = table.mean_vector(sentence)?;
    Some(dot(&q, &s))
}
