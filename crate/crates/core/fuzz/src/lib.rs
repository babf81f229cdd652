//! Bodies of the fuzz targets. Each takes raw bytes, must never panic on
//! malformed input, and checks that whatever parses survives a write and
//! re-parse unchanged.

use std::collections::BTreeSet;

use kerm::distill::{parse_meta_graphs, recognize_entities, split_sentences, write_meta_graphs, EntityLexicon};
use kerm::embed::{KgEmbeddings, WordEmbeddingTable};
use kerm::kg::{EntityId, KnowledgeGraph, RelationMergeMap, DEFAULT_MERGED_RELATIONS};
use kerm::model::{tokenize_pair, ModelCheckpoint, Vocab};
use kerm::numerics::ParamStore;
use kerm::rank::{parse_id_text, write_id_text, Qrels, RunFile};
use kerm::text::tokenize;

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

pub fn triples_tsv(data: &[u8]) {
    let Some(s) = text(data) else { return };
    for merge in [RelationMergeMap::identity(), RelationMergeMap::conceptnet()] {
        if let Ok(g) = KnowledgeGraph::parse_tsv(s, "fuzz", &merge) {
            let again = KnowledgeGraph::parse_tsv(&g.to_tsv(), "fuzz", &RelationMergeMap::identity()).unwrap();
            assert_eq!(again.to_tsv(), g.to_tsv());
        }
    }
}

pub fn merge_map(data: &[u8]) {
    let Some(s) = text(data) else { return };
    for expected in [1, DEFAULT_MERGED_RELATIONS] {
        if let Ok(m) = RelationMergeMap::from_json(s, expected, true) {
            assert_eq!(m.merged_names().count(), expected);
            for name in m.merged_names() {
                assert_eq!(m.resolve(name).unwrap(), name);
            }
        }
    }
}

pub fn word_vectors(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(t) = WordEmbeddingTable::parse(s, "fuzz") {
        let again = WordEmbeddingTable::parse(&t.to_text(), "fuzz").unwrap();
        assert_eq!(again.to_text(), t.to_text());
    }
}

pub fn qrels(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(q) = Qrels::parse(s, "fuzz") {
        assert_eq!(Qrels::parse(&q.to_text(), "fuzz").unwrap(), q);
    }
}

pub fn run_file(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(r) = RunFile::parse(s, "fuzz") {
        assert_eq!(RunFile::parse(&r.to_text(), "fuzz").unwrap(), r);
    }
}

pub fn id_text(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(entries) = parse_id_text(s, "fuzz") {
        let once = parse_id_text(&write_id_text(&entries), "fuzz").unwrap();
        let keys = |m: &std::collections::BTreeMap<String, String>| m.keys().cloned().collect::<BTreeSet<_>>();
        assert_eq!(keys(&once), keys(&entries));
        assert_eq!(parse_id_text(&write_id_text(&once), "fuzz").unwrap(), once);
    }
}

pub fn meta_graphs(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(records) = parse_meta_graphs(s, "fuzz") {
        assert_eq!(parse_meta_graphs(&write_meta_graphs(&records), "fuzz").unwrap(), records);
    }
}

pub fn graph_json(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(g) = KnowledgeGraph::from_json(s) {
        assert_eq!(KnowledgeGraph::from_json(&g.to_json()).unwrap(), g);
        for e in 0..g.entity_count() {
            g.neighbors(EntityId(e as u32)).unwrap();
        }
    }
}

/// Two-entity, one-relation graph the embedding checkpoints are checked against.
pub fn reference_graph() -> KnowledgeGraph {
    KnowledgeGraph::parse_tsv("paris\tcapital_of\tfrance\n", "reference", &RelationMergeMap::identity()).unwrap()
}

pub fn embedding_checkpoint(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let g = reference_graph();
    if let Ok(emb) = KgEmbeddings::from_checkpoint(s, &g) {
        assert!(emb.matches(&g));
        assert_eq!(KgEmbeddings::from_checkpoint(&emb.to_checkpoint(&g), &g).unwrap(), emb);
    }
}

pub fn param_checkpoint(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(p) = ParamStore::from_checkpoint(s) {
        assert_eq!(ParamStore::from_checkpoint(&p.to_checkpoint()).unwrap(), p);
    }
}

pub fn model_checkpoint(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(c) = ModelCheckpoint::from_text(s) {
        assert_eq!(ModelCheckpoint::from_text(&c.to_text()).unwrap(), c);
    }
}

/// First line is the query, the rest the passage.
pub fn tokenize_and_recognize(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let (query, passage) = s.split_once('\n').unwrap_or((s, ""));
    let lex = EntityLexicon::from_entries([("liver", EntityId(0)), ("liver_enzyme", EntityId(1)), ("cause", EntityId(2))]);
    let tokens = tokenize(query);
    assert_eq!(tokenize(&tokens.join(" ")), tokens);
    for m in recognize_entities(&tokens, &lex) {
        assert!(m.span.start < m.span.end && m.span.end <= tokens.len());
    }
    let sentences = split_sentences(passage);
    assert!(sentences.iter().all(|s| !s.is_empty()));
    let vocab = Vocab::build([query, passage]);
    for max_len in [4, 16, 128] {
        if let Ok(pair) = tokenize_pair(query, passage, &vocab, max_len) {
            assert!(pair.len() <= max_len);
            assert_eq!(pair.ids.len(), pair.segments.len());
        }
    }
}

/// Target name, which is also its corpus directory, and body.
pub type Target = (&'static str, fn(&[u8]));

pub const TARGETS: &[Target] = &[
    ("triples_tsv", triples_tsv),
    ("merge_map", merge_map),
    ("word_vectors", word_vectors),
    ("qrels", qrels),
    ("run_file", run_file),
    ("id_text", id_text),
    ("meta_graphs", meta_graphs),
    ("graph_json", graph_json),
    ("embedding_checkpoint", embedding_checkpoint),
    ("param_checkpoint", param_checkpoint),
    ("model_checkpoint", model_checkpoint),
    ("tokenize_and_recognize", tokenize_and_recognize),
];
