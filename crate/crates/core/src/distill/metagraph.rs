use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lexicon::{recognize_entities, EntityLexicon, Mention, Span};
use super::prune::PrunedGraph;
use super::sentences::{select_key_sentence, split_sentences, KeySentence};
use crate::embed::{triplet_reliability, KgEmbeddings, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId, Triplet};
use crate::text::tokenize;

pub const DEFAULT_MAX_HOPS: usize = 2;
pub const DEFAULT_MAX_FRONTIER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaGraphConfig {
    /// Maximum number of edges on a path.
    pub max_hops: usize,
    /// Cap on partial paths carried to the next hop.
    pub max_frontier: usize,
}

impl Default for MetaGraphConfig {
    fn default() -> Self {
        MetaGraphConfig {
            max_hops: DEFAULT_MAX_HOPS,
            max_frontier: DEFAULT_MAX_FRONTIER,
        }
    }
}

/// Alternating entity/relation walk: `entities.len() == relations.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetaPath {
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
}

impl MetaPath {
    pub fn hops(&self) -> usize {
        self.relations.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.relations
            .iter()
            .enumerate()
            .map(|(i, &r)| Triplet::new(self.entities[i], r, self.entities[i + 1]))
    }

    /// Flat `[e0, r0, e1, r1, ...]` form used in dumps.
    pub fn to_ids(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.entities.len() + self.relations.len());
        for (i, e) in self.entities.iter().enumerate() {
            out.push(e.0);
            if let Some(r) = self.relations.get(i) {
                out.push(r.0);
            }
        }
        out
    }

    pub fn from_ids(ids: &[u32]) -> Result<Self> {
        if ids.len() < 3 || ids.len().is_multiple_of(2) {
            return Err(Error::Input(format!("path of {} ids is not entity(-relation-entity)+", ids.len())));
        }
        Ok(MetaPath {
            entities: ids.iter().step_by(2).map(|&e| EntityId(e)).collect(),
            relations: ids.iter().skip(1).step_by(2).map(|&r| RelationId(r)).collect(),
        })
    }
}

/// Bipartite multi-hop subgraph linking a query's entities to the entities of
/// the passage's key sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGraph {
    /// Distinct query entities in order of first mention.
    pub query_entities: Vec<EntityId>,
    /// First-mention span of each query entity, in query token coordinates.
    pub query_spans: Vec<Span>,
    pub sentence_entities: Vec<EntityId>,
    /// First-mention span of each sentence entity, relative to the key sentence.
    pub sentence_spans: Vec<Span>,
    pub key_sentence: usize,
    /// Key sentence position in passage token coordinates.
    pub key_span: Span,
    pub key_score: Option<f64>,
    pub paths: Vec<MetaPath>,
    pub truncated: bool,
    nodes: Vec<EntityId>,
    edges: Vec<Triplet>,
}

impl MetaGraph {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        query: &[Mention],
        sentence: &[Mention],
        key_sentence: usize,
        key_span: Span,
        key_score: Option<f64>,
        paths: Vec<MetaPath>,
        truncated: bool,
    ) -> Self {
        let (query_entities, query_spans) = first_mentions(query);
        let (sentence_entities, sentence_spans) = first_mentions(sentence);
        let mut mg = MetaGraph {
            query_entities,
            query_spans,
            sentence_entities,
            sentence_spans,
            key_sentence,
            key_span,
            key_score,
            paths,
            truncated,
            nodes: Vec::new(),
            edges: Vec::new(),
        };
        mg.rebuild_union();
        mg
    }

    /// A meta-graph with no target entities and no paths.
    pub fn empty() -> Self {
        Self::new(&[], &[], 0, Span::new(0, 0), None, Vec::new(), false)
    }

    fn rebuild_union(&mut self) {
        let nodes: BTreeSet<EntityId> = self.paths.iter().flat_map(|p| p.entities.iter().copied()).collect();
        let edges: BTreeSet<Triplet> = self.paths.iter().flat_map(|p| p.edges()).collect();
        self.nodes = nodes.into_iter().collect();
        self.edges = edges.into_iter().collect();
    }

    /// Every entity on some path, ascending id.
    pub fn nodes(&self) -> &[EntityId] {
        &self.nodes
    }

    /// Every edge on some path, sorted.
    pub fn edges(&self) -> &[Triplet] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// True when either side had no recognized entity.
    pub fn is_degenerate(&self) -> bool {
        self.query_entities.is_empty() || self.sentence_entities.is_empty()
    }

    /// Structural check against the graph it was built from.
    pub fn check_invariants(&self, pg: &PrunedGraph, max_hops: usize) -> Result<()> {
        let q: HashSet<EntityId> = self.query_entities.iter().copied().collect();
        let s: HashSet<EntityId> = self.sentence_entities.iter().copied().collect();
        if self.query_spans.len() != self.query_entities.len()
            || self.sentence_spans.len() != self.sentence_entities.len()
        {
            return Err(Error::Invariant("entity/span lists differ in length".into()));
        }
        for p in &self.paths {
            if p.entities.len() != p.relations.len() + 1 {
                return Err(Error::Invariant("malformed path".into()));
            }
            if p.hops() == 0 || p.hops() > max_hops {
                return Err(Error::Invariant(format!("path with {} hops", p.hops())));
            }
            if !q.contains(&p.entities[0]) || !s.contains(p.entities.last().expect("non-empty")) {
                return Err(Error::Invariant("path does not connect query to sentence entities".into()));
            }
            for t in p.edges() {
                if !pg.graph().contains(&t) {
                    return Err(Error::Invariant(format!("edge {t:?} not in pruned graph")));
                }
            }
        }
        let mut copy = self.clone();
        copy.rebuild_union();
        if copy.nodes != self.nodes || copy.edges != self.edges {
            return Err(Error::Invariant("nodes/edges are not the union over paths".into()));
        }
        Ok(())
    }
}

fn first_mentions(mentions: &[Mention]) -> (Vec<EntityId>, Vec<Span>) {
    let mut seen = HashSet::new();
    mentions
        .iter()
        .filter(|m| seen.insert(m.entity))
        .map(|m| (m.entity, m.span))
        .unzip()
}

/// Level-by-level path expansion from `sources`.
///
/// A path ends as soon as its last entity is a target; otherwise it is
/// extended at the next hop, up to `max_hops` edges. Sources are not checked
/// against the targets, so zero-hop paths never occur. Returns the paths in
/// discovery order and whether the frontier cap cut the search short.
pub fn discover_paths(
    pg: &PrunedGraph,
    sources: &[EntityId],
    targets: &[EntityId],
    cfg: &MetaGraphConfig,
) -> Result<(Vec<MetaPath>, bool)> {
    let targets: HashSet<EntityId> = targets.iter().copied().collect();
    let mut found = Vec::new();
    let mut truncated = false;
    if targets.is_empty() {
        return Ok((found, truncated));
    }
    let mut queue: Vec<MetaPath> = Vec::new();
    let mut seen_sources = HashSet::new();
    for &s in sources {
        if seen_sources.insert(s) {
            queue.push(MetaPath {
                entities: vec![s],
                relations: Vec::new(),
            });
        }
    }
    for hop in 1..=cfg.max_hops {
        let last_hop = hop == cfg.max_hops;
        let mut next = Vec::new();
        for path in &queue {
            let head = *path.entities.last().expect("paths are never empty");
            for &(r, t) in pg.neighbors(head)? {
                let extended = || {
                    let mut p = path.clone();
                    p.entities.push(t);
                    p.relations.push(r);
                    p
                };
                if targets.contains(&t) {
                    found.push(extended());
                } else if !last_hop {
                    if next.len() < cfg.max_frontier {
                        next.push(extended());
                    } else {
                        truncated = true;
                    }
                }
            }
        }
        queue = next;
        if queue.is_empty() {
            break;
        }
    }
    Ok((found, truncated))
}

/// Key-sentence selection, entity recognition on the query and key sentence,
/// then path discovery over the pruned graph.
pub fn build_meta_graph(
    query: &str,
    passage: &str,
    pg: &PrunedGraph,
    lex: &EntityLexicon,
    words: &WordEmbeddingTable,
    cfg: &MetaGraphConfig,
) -> Result<MetaGraph> {
    if cfg.max_hops == 0 {
        return Err(Error::Config("max_hops must be at least 1".into()));
    }
    let q_tokens = tokenize(query);
    let sentences = split_sentences(passage);
    let key = if sentences.is_empty() {
        KeySentence { index: 0, score: None }
    } else {
        select_key_sentence(words, &q_tokens, &sentences)
    };
    let offset: usize = sentences.iter().take(key.index).map(Vec::len).sum();
    let key_tokens: &[String] = sentences.get(key.index).map_or(&[], Vec::as_slice);
    let key_span = Span::new(offset, offset + key_tokens.len());

    let q_mentions = recognize_entities(&q_tokens, lex);
    let s_mentions = recognize_entities(key_tokens, lex);
    let q_ids: Vec<EntityId> = q_mentions.iter().map(|m| m.entity).collect();
    let s_ids: Vec<EntityId> = s_mentions.iter().map(|m| m.entity).collect();
    let (paths, truncated) = if q_ids.is_empty() {
        (Vec::new(), false)
    } else {
        discover_paths(pg, &q_ids, &s_ids, cfg)?
    };
    Ok(MetaGraph::new(&q_mentions, &s_mentions, key.index, key_span, key.score, paths, truncated))
}

/// Shared inputs for building many meta-graphs.
pub struct MetaGraphBuilder<'a> {
    pub pruned: &'a PrunedGraph,
    pub lexicon: &'a EntityLexicon,
    pub words: &'a WordEmbeddingTable,
    pub config: MetaGraphConfig,
}

impl MetaGraphBuilder<'_> {
    /// Builds one meta-graph per `(query, passage)` in parallel; output order
    /// follows input order.
    pub fn build_all(&self, pairs: &[(&str, &str)]) -> Result<Vec<MetaGraph>> {
        pairs
            .par_iter()
            .map(|(q, p)| build_meta_graph(q, p, self.pruned, self.lexicon, self.words, &self.config))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaGraphStats {
    pub graphs: usize,
    pub avg_edge_count: f64,
    /// Mean reliability over all edges; `None` when there are no edges.
    pub avg_edge_score: Option<f64>,
}

pub fn meta_graph_stats(mgs: &[MetaGraph], emb: &KgEmbeddings) -> Result<MetaGraphStats> {
    if mgs.is_empty() {
        return Err(Error::Config("no meta-graphs to summarize".into()));
    }
    let mut edge_total = 0usize;
    let mut score_sum = 0.0;
    for mg in mgs {
        edge_total += mg.edges().len();
        for t in mg.edges() {
            score_sum += triplet_reliability(emb, t.head, t.relation, t.tail)?;
        }
    }
    Ok(MetaGraphStats {
        graphs: mgs.len(),
        avg_edge_count: edge_total as f64 / mgs.len() as f64,
        avg_edge_score: (edge_total > 0).then(|| score_sum / edge_total as f64),
    })
}

/// A meta-graph tagged with the query and passage it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGraphRecord {
    pub qid: String,
    pub pid: String,
    pub meta: MetaGraph,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    qid: String,
    pid: String,
    key_sentence: usize,
    key_span: Span,
    key_score: Option<f64>,
    query_entities: Vec<EntityId>,
    query_spans: Vec<Span>,
    sentence_entities: Vec<EntityId>,
    sentence_spans: Vec<Span>,
    paths: Vec<Vec<u32>>,
    truncated: bool,
}

impl MetaGraphRecord {
    pub fn to_json_line(&self) -> String {
        let m = &self.meta;
        let wire = Wire {
            qid: self.qid.clone(),
            pid: self.pid.clone(),
            key_sentence: m.key_sentence,
            key_span: m.key_span,
            key_score: m.key_score,
            query_entities: m.query_entities.clone(),
            query_spans: m.query_spans.clone(),
            sentence_entities: m.sentence_entities.clone(),
            sentence_spans: m.sentence_spans.clone(),
            paths: m.paths.iter().map(MetaPath::to_ids).collect(),
            truncated: m.truncated,
        };
        serde_json::to_string(&wire).expect("meta-graph serializes")
    }

    fn from_wire(w: Wire) -> Result<Self> {
        if w.query_entities.len() != w.query_spans.len() || w.sentence_entities.len() != w.sentence_spans.len() {
            return Err(Error::Input("entity and span lists differ in length".into()));
        }
        for s in w.query_spans.iter().chain(&w.sentence_spans).chain([&w.key_span]) {
            if s.start > s.end {
                return Err(Error::Input(format!("inverted span {s:?}")));
            }
        }
        let paths = w
            .paths
            .iter()
            .map(|p| MetaPath::from_ids(p))
            .collect::<Result<Vec<_>>>()?;
        let mut meta = MetaGraph {
            query_entities: w.query_entities,
            query_spans: w.query_spans,
            sentence_entities: w.sentence_entities,
            sentence_spans: w.sentence_spans,
            key_sentence: w.key_sentence,
            key_span: w.key_span,
            key_score: w.key_score,
            paths,
            truncated: w.truncated,
            nodes: Vec::new(),
            edges: Vec::new(),
        };
        meta.rebuild_union();
        Ok(MetaGraphRecord {
            qid: w.qid,
            pid: w.pid,
            meta,
        })
    }
}

pub fn write_meta_graphs(records: &[MetaGraphRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

/// Parses a JSON-lines meta-graph dump; errors carry the 1-based line.
pub fn parse_meta_graphs(text: &str, source_name: &str) -> Result<Vec<MetaGraphRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wire: Wire =
            serde_json::from_str(line).map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        out.push(MetaGraphRecord::from_wire(wire).map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KnowledgeGraph;
    use crate::numerics::Matrix;

    fn graph(n: usize, edges: &[(u32, u32, u32)]) -> PrunedGraph {
        let g = KnowledgeGraph::from_parts(
            (0..n).map(|i| format!("n{i}")).collect(),
            vec!["r0".into(), "r1".into()],
            edges
                .iter()
                .map(|&(h, r, t)| Triplet::new(EntityId(h), RelationId(r), EntityId(t))),
        )
        .unwrap();
        PrunedGraph::from_graph(g, 100).unwrap()
    }

    fn ids(v: &[u32]) -> Vec<EntityId> {
        v.iter().map(|&i| EntityId(i)).collect()
    }

    #[test]
    fn chain_yields_single_two_hop_path() {
        let pg = graph(3, &[(0, 0, 1), (1, 0, 2)]);
        let (paths, truncated) = discover_paths(&pg, &ids(&[0]), &ids(&[2]), &MetaGraphConfig::default()).unwrap();
        assert!(!truncated);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].to_ids(), [0, 0, 1, 0, 2]);
        let mg = MetaGraph::new(&[], &[], 0, Span::new(0, 0), None, paths, false);
        assert_eq!(mg.nodes(), ids(&[0, 1, 2]).as_slice());
        assert_eq!(mg.edges().len(), 2);
    }

    #[test]
    fn same_source_and_target_needs_a_cycle() {
        // 3-cycle 0 -> 1 -> 2 -> 0
        let pg = graph(3, &[(0, 0, 1), (1, 0, 2), (2, 0, 0)]);
        let cfg2 = MetaGraphConfig { max_hops: 2, ..Default::default() };
        let (paths, _) = discover_paths(&pg, &ids(&[0]), &ids(&[0]), &cfg2).unwrap();
        assert!(paths.is_empty());
        let cfg3 = MetaGraphConfig { max_hops: 3, ..Default::default() };
        let (paths, _) = discover_paths(&pg, &ids(&[0]), &ids(&[0]), &cfg3).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].hops(), 3);
    }

    #[test]
    fn paths_stop_at_first_target() {
        // 0 -> 1 -> 2 with both 1 and 2 targets: only 0-1 is kept
        let pg = graph(3, &[(0, 0, 1), (1, 0, 2)]);
        let (paths, _) = discover_paths(&pg, &ids(&[0]), &ids(&[1, 2]), &MetaGraphConfig::default()).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].to_ids(), [0, 0, 1]);
    }

    #[test]
    fn frontier_cap_sets_flag() {
        let edges: Vec<(u32, u32, u32)> = (1..6).map(|t| (0, 0, t)).chain([(5, 0, 6)]).collect();
        let pg = graph(7, &edges);
        let cfg = MetaGraphConfig { max_hops: 2, max_frontier: 2 };
        let (paths, truncated) = discover_paths(&pg, &ids(&[0]), &ids(&[6]), &cfg).unwrap();
        assert!(truncated);
        assert!(paths.is_empty());
    }

    fn words() -> WordEmbeddingTable {
        WordEmbeddingTable::parse("liver 1 0\nenzyme 1 0\nhepatitis 1 0\nsky 0 1\n", "v").unwrap()
    }

    #[test]
    fn build_from_text() {
        let g = KnowledgeGraph::parse_tsv(
            "liver enzyme\trelatedto\thepatitis\nsky\tisa\tblue\n",
            "kg",
            &crate::kg::RelationMergeMap::identity(),
        )
        .unwrap();
        let pg = PrunedGraph::from_graph(g.clone(), 20).unwrap();
        let lex = EntityLexicon::from_graph(&g);
        let mg = build_meta_graph(
            "what causes low liver enzymes",
            "The sky is blue. Hepatitis raises liver markers.",
            &pg,
            &lex,
            &words(),
            &MetaGraphConfig::default(),
        )
        .unwrap();
        assert_eq!(mg.key_sentence, 1);
        assert_eq!(mg.key_span, Span::new(4, 8));
        assert_eq!(mg.paths.len(), 1);
        assert_eq!(mg.query_spans, [Span::new(3, 5)]);
        mg.check_invariants(&pg, 2).unwrap();

        let none = build_meta_graph("sky", "nothing relevant here", &pg, &lex, &words(), &MetaGraphConfig::default()).unwrap();
        assert!(none.is_empty() && none.is_degenerate());
    }

    #[test]
    fn stats_examples() {
        let g = KnowledgeGraph::from_parts(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["r".into()],
            [Triplet::new(EntityId(0), RelationId(0), EntityId(1)), Triplet::new(EntityId(1), RelationId(0), EntityId(2))],
        )
        .unwrap();
        // reliabilities: a-b = 1*1 = 1.0, b-c = 1*3 = 3.0 (relation vector zero)
        let emb = KgEmbeddings::new(
            Matrix::from_rows(&[[1.0], [1.0], [3.0]]),
            Matrix::from_rows(&[[0.0]]),
        )
        .unwrap();
        assert!(emb.matches(&g));
        let path = MetaPath::from_ids(&[0, 0, 1, 0, 2]).unwrap();
        let mg = MetaGraph::new(&[], &[], 0, Span::new(0, 0), None, vec![path], false);
        let s = meta_graph_stats(&[mg], &emb).unwrap();
        assert_eq!((s.avg_edge_count, s.avg_edge_score), (2.0, Some(2.0)));

        let s = meta_graph_stats(&[MetaGraph::empty()], &emb).unwrap();
        assert_eq!((s.avg_edge_count, s.avg_edge_score), (0.0, None));
        assert!(matches!(meta_graph_stats(&[], &emb), Err(Error::Config(_))));
    }

    #[test]
    fn dump_roundtrip_and_golden_line() {
        let path = MetaPath::from_ids(&[0, 1, 2]).unwrap();
        let q = [Mention { entity: EntityId(0), span: Span::new(1, 2) }];
        let s = [Mention { entity: EntityId(2), span: Span::new(0, 1) }];
        let rec = MetaGraphRecord {
            qid: "q1".into(),
            pid: "p7".into(),
            meta: MetaGraph::new(&q, &s, 1, Span::new(3, 6), Some(0.25), vec![path], false),
        };
        let line = rec.to_json_line();
        assert_eq!(
            line,
            r#"{"qid":"q1","pid":"p7","key_sentence":1,"key_span":[3,6],"key_score":0.25,"query_entities":[0],"query_spans":[[1,2]],"sentence_entities":[2],"sentence_spans":[[0,1]],"paths":[[0,1,2]],"truncated":false}"#
        );
        let back = parse_meta_graphs(&line, "dump").unwrap();
        assert_eq!(back, vec![rec]);

        let err = parse_meta_graphs("\n{\"qid\":1}\n", "dump").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let bad_path = line.replace("[[0,1,2]]", "[[0,1]]");
        assert!(parse_meta_graphs(&bad_path, "dump").is_err());
    }
}
