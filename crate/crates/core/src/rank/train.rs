use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trec::{Qrels, RunFile, RELEVANT_GRADE};
use crate::distill::{MetaGraph, MetaGraphBuilder, MetaGraphRecord};
use crate::embed::KgEmbeddings;
use crate::error::{Error, Result};
use crate::model::{tokenize_pair, Kerm, KnowledgeInput, ParamGroup, TokenizedPair, Vocab};
use crate::numerics::{Gradients, Matrix, ParamStore, Tape};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub pid: String,
    pub text: String,
    /// Rank in the first-stage retrieval list.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RerankExample {
    pub qid: String,
    pub query: String,
    pub candidates: Vec<Candidate>,
    /// Graded labels of judged candidates.
    pub labels: BTreeMap<String, i32>,
}

impl RerankExample {
    /// Label of every candidate in candidate order, unjudged as 0.
    pub fn candidate_labels(&self) -> Vec<i32> {
        self.candidates
            .iter()
            .map(|c| self.labels.get(&c.pid).copied().unwrap_or(0))
            .collect()
    }
}

/// Joins candidate lists with query and passage texts and their judgments.
pub fn build_examples(
    queries: &BTreeMap<String, String>,
    collection: &BTreeMap<String, String>,
    candidates: &RunFile,
    qrels: &Qrels,
) -> Result<Vec<RerankExample>> {
    let mut out = Vec::new();
    for (qid, rows) in candidates.per_query() {
        let query = queries
            .get(qid)
            .ok_or_else(|| Error::Input(format!("no text for query {qid}")))?;
        let mut cands = Vec::with_capacity(rows.len());
        let mut labels = BTreeMap::new();
        for row in rows {
            let text = collection
                .get(&row.pid)
                .ok_or_else(|| Error::Input(format!("no text for passage {}", row.pid)))?;
            if cands.iter().any(|c: &Candidate| c.pid == row.pid) {
                return Err(Error::Input(format!("duplicate candidate {} for query {qid}", row.pid)));
            }
            let g = qrels.grade(qid, &row.pid);
            if g != 0 {
                labels.insert(row.pid.clone(), g);
            }
            cands.push(Candidate {
                pid: row.pid.clone(),
                text: text.clone(),
                rank: row.rank,
            });
        }
        out.push(RerankExample {
            qid: qid.to_string(),
            query: query.clone(),
            candidates: cands,
            labels,
        });
    }
    Ok(out)
}

/// Meta-graphs keyed by `(qid, pid)`.
pub type MetaGraphIndex = HashMap<(String, String), MetaGraph>;

/// One meta-graph per candidate pair, in example order.
pub fn build_meta_graphs(builder: &MetaGraphBuilder, examples: &[RerankExample]) -> Result<Vec<MetaGraphRecord>> {
    let keys: Vec<(&RerankExample, &Candidate)> = examples
        .iter()
        .flat_map(|ex| ex.candidates.iter().map(move |c| (ex, c)))
        .collect();
    let pairs: Vec<(&str, &str)> = keys.iter().map(|(ex, c)| (ex.query.as_str(), c.text.as_str())).collect();
    let metas = builder.build_all(&pairs)?;
    Ok(keys
        .into_iter()
        .zip(metas)
        .map(|((ex, c), meta)| MetaGraphRecord {
            qid: ex.qid.clone(),
            pid: c.pid.clone(),
            meta,
        })
        .collect())
}

pub fn index_meta_graphs(records: impl IntoIterator<Item = MetaGraphRecord>) -> MetaGraphIndex {
    records.into_iter().map(|r| ((r.qid, r.pid), r.meta)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCandidate {
    pub pid: String,
    pub pair: TokenizedPair,
    pub knowledge: KnowledgeInput,
}

/// A query with every candidate tokenized and its knowledge laid out.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuery {
    pub qid: String,
    pub candidates: Vec<PreparedCandidate>,
    pub labels: Vec<i32>,
}

/// Tokenizes every pair and lays out its meta-graph. A pair without a
/// meta-graph entry is an input error, even for models that ignore it.
pub fn prepare_examples(
    examples: &[RerankExample],
    vocab: &Vocab,
    emb: &KgEmbeddings,
    metas: &MetaGraphIndex,
    max_len: usize,
) -> Result<Vec<PreparedQuery>> {
    examples
        .par_iter()
        .map(|ex| {
            let candidates = ex
                .candidates
                .iter()
                .map(|c| {
                    let mg = metas
                        .get(&(ex.qid.clone(), c.pid.clone()))
                        .ok_or_else(|| Error::Input(format!("no meta-graph for pair ({}, {})", ex.qid, c.pid)))?;
                    let pair = tokenize_pair(&ex.query, &c.text, vocab, max_len)?;
                    let knowledge = KnowledgeInput::prepare(&pair, mg, emb)?;
                    Ok(PreparedCandidate {
                        pid: c.pid.clone(),
                        pair,
                        knowledge,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PreparedQuery {
                qid: ex.qid.clone(),
                candidates,
                labels: ex.candidate_labels(),
            })
        })
        .collect()
}

/// One training slot: candidate indices of a positive and its negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    pub positive: usize,
    pub negatives: Vec<usize>,
    /// Fewer than `n_neg` negatives existed, so they were drawn with replacement.
    pub with_replacement: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoPositive,
    NoNegative,
}

impl TrainBatch {
    /// Picks one relevant candidate and `n_neg` candidates labelled 0.
    pub fn sample(labels: &[i32], n_neg: usize, seed: u64) -> std::result::Result<Self, SkipReason> {
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] >= RELEVANT_GRADE).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
        if pos.is_empty() {
            return Err(SkipReason::NoPositive);
        }
        if neg.is_empty() {
            return Err(SkipReason::NoNegative);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positive = pos[rng.random_range(0..pos.len())];
        let with_replacement = neg.len() < n_neg;
        let negatives = if with_replacement {
            (0..n_neg).map(|_| neg[rng.random_range(0..neg.len())]).collect()
        } else {
            rand::seq::index::sample(&mut rng, neg.len(), n_neg)
                .into_iter()
                .map(|i| neg[i])
                .collect()
        };
        Ok(TrainBatch {
            positive,
            negatives,
            with_replacement,
        })
    }
}

pub fn sample_batch(ex: &RerankExample, n_neg: usize, seed: u64) -> std::result::Result<TrainBatch, SkipReason> {
    TrainBatch::sample(&ex.candidate_labels(), n_neg, seed)
}

/// Cross-entropy of the positive against the sampled negatives,
/// `logsumexp(s+, s-...) - s+`.
pub fn finetune_loss(pos: f64, negs: &[f64]) -> f64 {
    let max = negs.iter().copied().fold(pos, f64::max);
    let sum: f64 = std::iter::once(pos).chain(negs.iter().copied()).map(|s| (s - max).exp()).sum();
    (max + sum.ln() - pos).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_injector: f64,
    pub epochs: usize,
    pub n_neg: usize,
    /// Queries whose gradients are averaged into one optimizer step.
    pub queries_per_step: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_encoder: 1e-3,
            lr_injector: 1e-3,
            epochs: 20,
            n_neg: 19,
            queries_per_step: 8,
            seed: 17,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs_ok = self.lr_encoder >= 0.0 && self.lr_injector >= 0.0;
        if !lrs_ok || !self.lr_encoder.is_finite() || !self.lr_injector.is_finite() {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.n_neg == 0 || self.queries_per_step == 0 {
            return Err(Error::Config("n_neg and queries_per_step must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config("invalid Adam moment parameters".into()));
        }
        Ok(())
    }
}

/// Adam with one learning rate per parameter group.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    moments: BTreeMap<String, (Matrix, Matrix)>,
    step: i32,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, params: &mut ParamStore, cfg: &TrainConfig, lr: impl Fn(&str) -> f64) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (name, value, grad) in params.iter_mut() {
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Matrix::zeros(grad.rows(), grad.cols()), Matrix::zeros(grad.rows(), grad.cols())));
            let rate = lr(name);
            let it = value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((p, &g), (m, v)) in it {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    pub skipped_queries: usize,
    pub resampled_batches: usize,
    pub lr_encoder: f64,
    pub lr_injector: f64,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch log serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub log: Vec<EpochLog>,
    pub steps: usize,
}

/// Loss and gradients of one training slot.
pub fn slot_loss_and_grad(model: &Kerm, params: &ParamStore, q: &PreparedQuery, b: &TrainBatch) -> Result<(f64, Gradients)> {
    let slots: Vec<usize> = std::iter::once(b.positive).chain(b.negatives.iter().copied()).collect();
    let forwards = slots
        .par_iter()
        .map(|&i| {
            let c = &q.candidates[i];
            let mut tape = Tape::new();
            let s = model.forward(&mut tape, params, &c.pair, &c.knowledge, None)?;
            Ok((tape, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = forwards.iter().map(|(t, s)| t.value(*s).item()).collect();
    let loss = finetune_loss(scores[0], &scores[1..]);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    let grads = forwards
        .par_iter()
        .enumerate()
        .map(|(j, (tape, s))| {
            let d = exp[j] / z - if j == 0 { 1.0 } else { 0.0 };
            tape.backward(*s, d)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::default();
    for g in &grads {
        total.merge_scaled(g, 1.0);
    }
    Ok((loss, total))
}

/// Fine-tunes `params` on `data`. `on_epoch` sees each epoch's log and the
/// current weights and returns whether to continue.
pub fn train<F>(model: &Kerm, mut params: ParamStore, data: &[PreparedQuery], cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog, &ParamStore) -> Result<bool>,
{
    cfg.validate()?;
    model.check_params(&params)?;
    if data.is_empty() {
        return Err(Error::Config("no training queries".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new();
    let lr = |name: &str| match model.param_group(name) {
        ParamGroup::Encoder => cfg.lr_encoder,
        ParamGroup::Injector => cfg.lr_injector,
    };
    let mut log = Vec::new();
    let mut steps = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut slots, mut skipped, mut resampled, mut epoch_steps) = (0.0, 0usize, 0, 0, 0);
        for chunk in order.chunks(cfg.queries_per_step) {
            let mut batches = Vec::new();
            for &qi in chunk {
                match TrainBatch::sample(&data[qi].labels, cfg.n_neg, rng.random()) {
                    Ok(b) => {
                        resampled += usize::from(b.with_replacement);
                        batches.push((qi, b));
                    }
                    Err(_) => skipped += 1,
                }
            }
            if batches.is_empty() {
                continue;
            }
            let scale = 1.0 / batches.len() as f64;
            let mut grads = Gradients::default();
            let mut step_loss = 0.0;
            for (qi, b) in &batches {
                let (l, g) = slot_loss_and_grad(model, &params, &data[*qi], b)?;
                step_loss += l;
                grads.merge_scaled(&g, scale);
            }
            if !step_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: steps + 1,
                    loss: step_loss,
                });
            }
            params.zero_grad();
            params.accumulate_grads(&grads)?;
            adam.step(&mut params, cfg, lr);
            steps += 1;
            epoch_steps += 1;
            loss_sum += step_loss;
            slots += batches.len();
        }
        let entry = EpochLog {
            epoch,
            mean_loss: if slots == 0 { 0.0 } else { loss_sum / slots as f64 },
            steps: epoch_steps,
            skipped_queries: skipped,
            resampled_batches: resampled,
            lr_encoder: cfg.lr_encoder,
            lr_injector: cfg.lr_injector,
        };
        log::info!("epoch {epoch}: mean loss {:.6} over {epoch_steps} steps", entry.mean_loss);
        let keep_going = on_epoch(&entry, &params)?;
        log.push(entry);
        if !keep_going {
            break;
        }
    }
    Ok(TrainOutcome { params, log, steps })
}

/// Scores every candidate and ranks each query's list.
pub fn rerank(model: &Kerm, params: &ParamStore, data: &[PreparedQuery], tag: &str) -> Result<RunFile> {
    model.check_params(params)?;
    let scored = data
        .par_iter()
        .map(|q| {
            let list = q
                .candidates
                .iter()
                .map(|c| Ok((c.pid.clone(), model.score(params, &c.pair, &c.knowledge)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((q.qid.clone(), list))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    RunFile::from_scores(scored, tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_values() {
        assert!((finetune_loss(0.3, &[0.3]) - 2f64.ln()).abs() < 1e-15);
        assert!((finetune_loss(1.0, &[0.0, 0.0]) - 0.551_444_713_932_051_4).abs() < 1e-12);
        assert!(finetune_loss(800.0, &[0.0]) < 1e-300);
        assert!((finetune_loss(5.0, &[5.0; 19]) - 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_sampling() {
        let mut labels = vec![0; 31];
        labels[4] = 1;
        let b = TrainBatch::sample(&labels, 19, 3).unwrap();
        assert_eq!(b.positive, 4);
        let mut n = b.negatives.clone();
        n.sort_unstable();
        n.dedup();
        assert_eq!(n.len(), 19);
        assert!(!b.with_replacement && !n.contains(&4));
        assert_eq!(b, TrainBatch::sample(&labels, 19, 3).unwrap());

        let b = TrainBatch::sample(&[1, 0, 0, 0, 0, 0], 19, 3).unwrap();
        assert_eq!(b.negatives.len(), 19);
        assert!(b.with_replacement);
        assert_eq!(TrainBatch::sample(&[0, 0], 3, 1), Err(SkipReason::NoPositive));
        assert_eq!(TrainBatch::sample(&[2, 1], 3, 1), Err(SkipReason::NoNegative));
    }
}
