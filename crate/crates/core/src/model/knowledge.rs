use std::collections::{BTreeSet, HashMap};

use crate::distill::MetaGraph;
use crate::embed::KgEmbeddings;
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId, Triplet};
use crate::numerics::Matrix;

use super::vocab::TokenizedPair;

/// Meta-graph nodes split by whether they sit on a token of the pair.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntityAlignment {
    /// `(entity, pair token index)`, ascending entity id.
    pub aligned: Vec<(EntityId, usize)>,
    /// Nodes with no surviving token, ascending id.
    pub intermediate: Vec<EntityId>,
}

/// Query-side mentions take precedence when an entity occurs on both sides.
/// A mention cut off by truncation leaves its entity intermediate.
pub fn align_entities(pair: &TokenizedPair, mg: &MetaGraph) -> EntityAlignment {
    let query: HashMap<EntityId, usize> = mg
        .query_entities
        .iter()
        .zip(&mg.query_spans)
        .map(|(&e, s)| (e, s.start))
        .collect();
    let sentence: HashMap<EntityId, usize> = mg
        .sentence_entities
        .iter()
        .zip(&mg.sentence_spans)
        .map(|(&e, s)| (e, mg.key_span.start + s.start))
        .collect();
    let mut out = EntityAlignment::default();
    for &e in mg.nodes() {
        let pos = query
            .get(&e)
            .and_then(|&i| pair.query_position(i))
            .or_else(|| sentence.get(&e).and_then(|&i| pair.passage_position(i)));
        match pos {
            Some(p) => out.aligned.push((e, p)),
            None => out.intermediate.push(e),
        }
    }
    out
}

/// One directed message slot: `node` attends to `neighbor` through `relation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborEntry {
    pub node: usize,
    pub neighbor: usize,
    pub relation: usize,
}

/// Everything the injector needs about one meta-graph, in local indices.
///
/// Nodes are held in ascending entity id and neighbor entries in ascending
/// `(node, neighbor, relation)` id order whatever order the input came in,
/// so every sum over a node's neighbors runs in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeInput {
    pub nodes: Vec<EntityId>,
    pub relations: Vec<RelationId>,
    /// Translation embeddings of `nodes`.
    pub entity_vecs: Matrix,
    /// Translation embeddings of `relations`.
    pub relation_vecs: Matrix,
    pub entries: Vec<NeighborEntry>,
    /// `(local node, pair token index)` pairs.
    pub aligned: Vec<(usize, usize)>,
    pub intermediate: Vec<usize>,
}

impl KnowledgeInput {
    pub fn empty(entity_dim: usize) -> Self {
        KnowledgeInput {
            nodes: Vec::new(),
            relations: Vec::new(),
            entity_vecs: Matrix::zeros(0, entity_dim),
            relation_vecs: Matrix::zeros(0, entity_dim),
            entries: Vec::new(),
            aligned: Vec::new(),
            intermediate: Vec::new(),
        }
    }

    pub fn prepare(pair: &TokenizedPair, mg: &MetaGraph, emb: &KgEmbeddings) -> Result<Self> {
        let alignment = align_entities(pair, mg);
        Self::from_parts(mg.nodes(), mg.edges(), &alignment.aligned, emb)
    }

    /// Edges are used in both directions. Nodes in `aligned` must be among
    /// `nodes`; every other node is intermediate.
    pub fn from_parts(
        nodes: &[EntityId],
        edges: &[Triplet],
        aligned: &[(EntityId, usize)],
        emb: &KgEmbeddings,
    ) -> Result<Self> {
        let nodes: Vec<EntityId> = nodes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let local: HashMap<EntityId, usize> = nodes.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let find = |e: EntityId| {
            local
                .get(&e)
                .copied()
                .ok_or_else(|| Error::Invariant(format!("entity {e} is not a meta-graph node")))
        };

        let relations: Vec<RelationId> = edges
            .iter()
            .map(|t| t.relation)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let rel_local: HashMap<RelationId, usize> = relations.iter().enumerate().map(|(i, &r)| (r, i)).collect();

        let mut entries = BTreeSet::new();
        for t in edges {
            let (h, r, tl) = (find(t.head)?, rel_local[&t.relation], find(t.tail)?);
            entries.insert((h, tl, r));
            entries.insert((tl, h, r));
        }
        let entries = entries
            .into_iter()
            .map(|(node, neighbor, relation)| NeighborEntry { node, neighbor, relation })
            .collect();

        let mut aligned_local = aligned
            .iter()
            .map(|&(e, tok)| Ok((find(e)?, tok)))
            .collect::<Result<Vec<_>>>()?;
        aligned_local.sort_unstable();
        aligned_local.dedup_by_key(|a| a.0);
        let is_aligned: BTreeSet<usize> = aligned_local.iter().map(|a| a.0).collect();
        let intermediate = (0..nodes.len()).filter(|i| !is_aligned.contains(i)).collect();

        let d = emb.dim();
        let mut entity_vecs = Vec::with_capacity(nodes.len() * d);
        for &e in &nodes {
            entity_vecs.extend_from_slice(emb.entity(e)?);
        }
        let mut relation_vecs = Vec::with_capacity(relations.len() * d);
        for &r in &relations {
            relation_vecs.extend_from_slice(emb.relation(r)?);
        }
        Ok(KnowledgeInput {
            entity_vecs: Matrix::from_vec(nodes.len(), d, entity_vecs)?,
            relation_vecs: Matrix::from_vec(relations.len(), d, relation_vecs)?,
            nodes,
            relations,
            entries,
            aligned: aligned_local,
            intermediate,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn entity_dim(&self) -> usize {
        self.entity_vecs.cols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{MetaPath, Mention, Span};
    use crate::model::vocab::{tokenize_pair, Vocab};

    fn emb(n: usize, r: usize) -> KgEmbeddings {
        let e = Matrix::from_vec(n, 2, (0..n * 2).map(|i| i as f64).collect()).unwrap();
        let rel = Matrix::from_vec(r, 2, (0..r * 2).map(|i| -(i as f64)).collect()).unwrap();
        KgEmbeddings::new(e, rel).unwrap()
    }

    fn mention(e: u32, s: usize) -> Mention {
        Mention { entity: EntityId(e), span: Span::new(s, s + 1) }
    }

    #[test]
    fn alignment_prefers_query_side_and_respects_truncation() {
        // query "x a", passage "pad. y b z": key sentence is the second one
        let path = MetaPath {
            entities: vec![EntityId(0), EntityId(3), EntityId(1)],
            relations: vec![RelationId(0), RelationId(0)],
        };
        let path2 = MetaPath {
            entities: vec![EntityId(0), EntityId(2)],
            relations: vec![RelationId(0)],
        };
        let mg = MetaGraph::new(
            &[mention(0, 1)],
            &[mention(1, 1), mention(2, 2), mention(0, 0)],
            1,
            Span::new(1, 4),
            None,
            vec![path, path2],
            false,
        );
        let v = Vocab::build(["x a pad y b z"]);
        let full = tokenize_pair("x a", "pad. y b z", &v, 64).unwrap();
        let al = align_entities(&full, &mg);
        // entity 0 aligned on query token 1 -> pair index 2
        assert_eq!(al.aligned, [(EntityId(0), 2), (EntityId(1), 6), (EntityId(2), 7)]);
        assert_eq!(al.intermediate, [EntityId(3)]);

        let cut = tokenize_pair("x a", "pad. y b z", &v, 8).unwrap();
        let al = align_entities(&cut, &mg);
        assert_eq!(al.aligned, [(EntityId(0), 2), (EntityId(1), 6)]);
        assert_eq!(al.intermediate, [EntityId(2), EntityId(3)]);
    }

    #[test]
    fn input_is_canonical() {
        let e = emb(4, 2);
        let edges = [
            Triplet { head: EntityId(3), relation: RelationId(1), tail: EntityId(1) },
            Triplet { head: EntityId(1), relation: RelationId(0), tail: EntityId(2) },
        ];
        let a = KnowledgeInput::from_parts(&[EntityId(3), EntityId(1), EntityId(2)], &edges, &[(EntityId(2), 5)], &e).unwrap();
        let b = KnowledgeInput::from_parts(&[EntityId(2), EntityId(3), EntityId(1)], &edges[..], &[(EntityId(2), 5)], &e).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nodes, [EntityId(1), EntityId(2), EntityId(3)]);
        assert_eq!(a.entries.len(), 4);
        assert_eq!(a.entries[0], NeighborEntry { node: 0, neighbor: 1, relation: 0 });
        assert_eq!(a.aligned, [(1, 5)]);
        assert_eq!(a.intermediate, [0, 2]);
        assert_eq!(a.entity_vecs.row(0), &[2.0, 3.0]);
        assert!(KnowledgeInput::from_parts(&[EntityId(1)], &edges, &[], &e).is_err());
    }
}
