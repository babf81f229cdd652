use std::cmp::Ordering;

use crate::embed::{triplet_reliability, KgEmbeddings};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triplet};

/// Default neighbor budget per head entity.
pub const DEFAULT_PI: usize = 20;

/// Knowledge graph whose adjacency lists keep only the `pi` most reliable
/// outgoing edges of every head.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedGraph {
    graph: KnowledgeGraph,
    pi: usize,
}

impl PrunedGraph {
    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn pi(&self) -> usize {
        self.pi
    }

    pub fn neighbors(&self, e: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.graph.neighbors(e)
    }

    /// Wraps an already-pruned graph, e.g. one restored from a dump.
    /// Fails if any head exceeds `pi` outgoing edges.
    pub fn from_graph(graph: KnowledgeGraph, pi: usize) -> Result<Self> {
        if pi == 0 {
            return Err(Error::Config("pi must be positive".into()));
        }
        if graph.stats().max_out_degree > pi {
            return Err(Error::Input(format!(
                "graph has out-degree {} above pi {pi}",
                graph.stats().max_out_degree
            )));
        }
        Ok(PrunedGraph { graph, pi })
    }
}

/// Descending reliability, then ascending relation id, then ascending tail id.
pub fn edge_order(a: &(f64, RelationId, EntityId), b: &(f64, RelationId, EntityId)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.cmp(&b.1))
        .then_with(|| a.2.cmp(&b.2))
}

/// Keeps, per head entity, the `pi` outgoing edges of highest reliability.
///
/// Ranking by descending reliability is the same as ranking by ascending
/// distance whenever reliabilities are positive, and stays a total order
/// when they are not.
pub fn prune_graph(g: &KnowledgeGraph, emb: &KgEmbeddings, pi: usize) -> Result<PrunedGraph> {
    if pi == 0 {
        return Err(Error::Config("pi must be positive".into()));
    }
    if !emb.matches(g) {
        return Err(Error::Config("embeddings do not match the graph vocabularies".into()));
    }
    let mut kept = Vec::new();
    let mut scored = Vec::new();
    for h in 0..g.entity_count() {
        let head = EntityId(h as u32);
        let edges = g.neighbors(head)?;
        if edges.len() <= pi {
            kept.extend(edges.iter().map(|&(r, t)| Triplet::new(head, r, t)));
            continue;
        }
        scored.clear();
        for &(r, t) in edges {
            scored.push((triplet_reliability(emb, head, r, t)?, r, t));
        }
        scored.sort_by(edge_order);
        kept.extend(scored[..pi].iter().map(|&(_, r, t)| Triplet::new(head, r, t)));
    }
    Ok(PrunedGraph {
        graph: g.with_triplets(kept),
        pi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    /// Head `a` with edges to b, c, d whose reliabilities are 3.0, 1.0, 2.5.
    fn fixture() -> (KnowledgeGraph, KgEmbeddings) {
        let g = KnowledgeGraph::from_parts(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec!["r".into()],
            [1, 2, 3].map(|t| Triplet::new(EntityId(0), RelationId(0), EntityId(t))),
        )
        .unwrap();
        // E(a) = [1, 0], E(r) = [0, 0]: reliability = E(t)[0]
        let ent = Matrix::from_rows(&[[1.0, 0.0], [3.0, 0.0], [1.0, 0.0], [2.5, 0.0]]);
        let emb = KgEmbeddings::new(ent, Matrix::from_rows(&[[0.0, 0.0]])).unwrap();
        (g, emb)
    }

    #[test]
    fn keeps_top_pi() {
        let (g, emb) = fixture();
        let p = prune_graph(&g, &emb, 2).unwrap();
        let tails: Vec<u32> = p.neighbors(EntityId(0)).unwrap().iter().map(|e| e.1 .0).collect();
        assert_eq!(tails, [1, 3]);
    }

    #[test]
    fn underfull_lists_keep_everything() {
        let (g, emb) = fixture();
        let p = prune_graph(&g, &emb, 5).unwrap();
        assert_eq!(p.graph().triplets(), g.triplets());
        assert!(matches!(prune_graph(&g, &emb, 0), Err(Error::Config(_))));
    }

    #[test]
    fn ties_prefer_smaller_relation_id() {
        let g = KnowledgeGraph::from_parts(
            vec!["a".into(), "b".into()],
            vec!["r0".into(), "r1".into()],
            [
                Triplet::new(EntityId(0), RelationId(1), EntityId(1)),
                Triplet::new(EntityId(0), RelationId(0), EntityId(1)),
            ],
        )
        .unwrap();
        let emb = KgEmbeddings::new(
            Matrix::from_rows(&[[1.0], [1.0]]),
            Matrix::from_rows(&[[0.0], [0.0]]),
        )
        .unwrap();
        let p = prune_graph(&g, &emb, 1).unwrap();
        assert_eq!(p.neighbors(EntityId(0)).unwrap(), [(RelationId(0), EntityId(1))]);
    }

    #[test]
    fn non_positive_reliability_ranks_last() {
        let mut v = [
            (-1.0, RelationId(0), EntityId(0)),
            (0.0, RelationId(0), EntityId(1)),
            (0.5, RelationId(0), EntityId(2)),
        ];
        v.sort_by(edge_order);
        assert_eq!(v[0].2, EntityId(2));
        assert_eq!(v[2].2, EntityId(0));
    }
}
