#![allow(dead_code)]

use std::collections::BTreeMap;

use kerm::distill::{prune_graph, EntityLexicon, MetaGraphBuilder, MetaGraphConfig};
use kerm::embed::{train_transe, KgEmbeddings, TransEConfig};
use kerm::model::Vocab;
use kerm::rank::{build_examples, build_meta_graphs, index_meta_graphs, prepare_examples, PreparedQuery};
use kerm::synth::SynthCorpus;

pub struct PreparedCorpus {
    pub vocab: Vocab,
    pub embeddings: KgEmbeddings,
    pub queries: BTreeMap<String, PreparedQuery>,
}

impl PreparedCorpus {
    pub fn select(&self, qids: impl IntoIterator<Item = String>) -> Vec<PreparedQuery> {
        qids.into_iter().map(|q| self.queries[&q].clone()).collect()
    }
}

/// Graph, translation embeddings, meta-graphs and tokenized pairs for every
/// query of a synthetic corpus.
pub fn prepare(corpus: &SynthCorpus, entity_dim: usize, max_len: usize) -> PreparedCorpus {
    let g = corpus.knowledge_graph().unwrap();
    let emb = train_transe(&g, &TransEConfig { dim: entity_dim, epochs: 200, ..Default::default() })
        .unwrap()
        .embeddings;
    let pruned = prune_graph(&g, &emb, 20).unwrap();
    let lexicon = EntityLexicon::from_graph(&g);
    let builder = MetaGraphBuilder {
        pruned: &pruned,
        lexicon: &lexicon,
        words: &corpus.words,
        config: MetaGraphConfig::default(),
    };
    let examples = build_examples(&corpus.queries, &corpus.collection, &corpus.candidates, &corpus.qrels).unwrap();
    let metas = index_meta_graphs(build_meta_graphs(&builder, &examples).unwrap());
    let vocab = Vocab::build(corpus.queries.values().chain(corpus.collection.values()).map(String::as_str));
    let prepared = prepare_examples(&examples, &vocab, &emb, &metas, max_len).unwrap();
    PreparedCorpus {
        vocab,
        embeddings: emb,
        queries: prepared.into_iter().map(|q| (q.qid.clone(), q)).collect(),
    }
}
