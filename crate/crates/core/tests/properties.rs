mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use kerm::distill::{build_meta_graph, prune_graph, EntityLexicon, MetaGraphConfig};
use kerm::embed::{KgEmbeddings, WordEmbeddingTable};
use kerm::kg::{EntityId, KnowledgeGraph, RelationId, RelationMergeMap, Triplet};
use kerm::model::{tokenize_pair, Kerm, KermConfig, Vocab};
use kerm::numerics::{softmax_rows, Matrix, Tape};
use kerm::rank::{finetune_loss, map_at_k, mrr_at_k, rerank, Qrels, RunFile};
use kerm::synth::{generate, SynthConfig};
use proptest::prelude::*;

fn graph_strategy(max_ent: u32, max_edges: usize) -> impl Strategy<Value = (u32, u32, Vec<(u32, u32, u32)>)> {
    (2..=max_ent, 1u32..4).prop_flat_map(move |(n, r)| {
        (Just(n), Just(r), prop::collection::vec((0..n, 0..r, 0..n), 1..=max_edges))
    })
}

fn build(n: u32, r: u32, edges: &[(u32, u32, u32)]) -> KnowledgeGraph {
    KnowledgeGraph::from_parts(
        (0..n).map(|i| format!("n{i}")).collect(),
        (0..r).map(|i| format!("r{i}")).collect(),
        edges.iter().map(|&(h, r, t)| Triplet::new(EntityId(h), RelationId(r), EntityId(t))),
    )
    .unwrap()
}

fn embeddings(n: u32, r: u32, values: &[f64]) -> KgEmbeddings {
    let dim = 2;
    let take = |count: usize, skip: usize| {
        let data: Vec<f64> = values.iter().cycle().skip(skip).take(count * dim).copied().collect();
        Matrix::from_vec(count, dim, data).unwrap()
    };
    KgEmbeddings::new(take(n as usize, 0), take(r as usize, 3)).unwrap()
}

fn run_strategy() -> impl Strategy<Value = BTreeMap<String, Vec<(String, f64)>>> {
    prop::collection::btree_map(
        "q[0-9]",
        prop::collection::btree_map("p[0-9]{1,2}", -8i32..8, 1..25)
            .prop_map(|m| m.into_iter().map(|(p, s)| (p, s as f64 / 2.0)).collect::<Vec<_>>()),
        1..5,
    )
}

fn qrels_for(run: &BTreeMap<String, Vec<(String, f64)>>, grades: &[i32]) -> Qrels {
    let mut qrels = Qrels::new();
    let mut g = grades.iter().cycle();
    for (qid, list) in run {
        for (pid, _) in list {
            qrels.insert(qid, pid, *g.next().unwrap());
        }
    }
    qrels
}

struct Fixture {
    data: Vec<kerm::rank::PreparedQuery>,
    model: Kerm,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let corpus = generate(&SynthConfig { queries: 4, candidates: 5, group_size: 4, decoys_per_group: 2, seed: 21, ..Default::default() }).unwrap();
        let prepared = common::prepare(&corpus, 8, 48);
        let model = Kerm::new(
            KermConfig { hidden: 8, ffn: 8, entity_dim: 8, heads: 2, max_len: 48, text_layers: 1, injector_layers: 2, ..Default::default() },
            prepared.vocab.len(),
        )
        .unwrap();
        Fixture { data: prepared.queries.into_values().collect(), model }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_nonnegative_and_shift_invariant(
        pos in -20.0f64..20.0,
        negs in prop::collection::vec(-20.0f64..20.0, 1..20),
        shift in -50.0f64..50.0,
    ) {
        let l = finetune_loss(pos, &negs);
        prop_assert!(l >= 0.0);
        let shifted: Vec<f64> = negs.iter().map(|n| n + shift).collect();
        prop_assert!((finetune_loss(pos + shift, &shifted) - l).abs() <= 1e-9 * (1.0 + l));
    }

    #[test]
    fn metrics_lie_in_unit_interval(run in run_strategy(), grades in prop::collection::vec(0i32..3, 1..7), k in 1usize..40) {
        let qrels = qrels_for(&run, &grades);
        let run = RunFile::from_scores(run, "p").unwrap();
        if let Ok(m) = mrr_at_k(&run, &qrels, k) {
            prop_assert!((0.0..=1.0).contains(&m));
            let ap = map_at_k(&run, &qrels, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }

    #[test]
    fn run_text_round_trips(scores in run_strategy()) {
        let run = RunFile::from_scores(scores, "tag").unwrap();
        let back = RunFile::parse(&run.to_text(), "run").unwrap();
        prop_assert_eq!(back, run);
    }

    #[test]
    fn qrels_text_round_trips(run in run_strategy(), grades in prop::collection::vec(0i32..4, 1..7)) {
        let qrels = qrels_for(&run, &grades);
        prop_assert_eq!(Qrels::parse(&qrels.to_text(), "qrels").unwrap(), qrels);
    }

    #[test]
    fn ranks_are_a_permutation(scores in run_strategy()) {
        let run = RunFile::from_scores(scores.clone(), "t").unwrap();
        for (qid, rows) in run.per_query() {
            let ranks: Vec<usize> = rows.iter().map(|r| r.rank).collect();
            prop_assert_eq!(ranks, (1..=rows.len()).collect::<Vec<_>>());
            let pids: BTreeSet<&str> = rows.iter().map(|r| r.pid.as_str()).collect();
            let input: BTreeSet<&str> = scores[qid].iter().map(|(p, _)| p.as_str()).collect();
            prop_assert_eq!(pids, input);
            prop_assert!(rows.windows(2).all(|w| w[0].score >= w[1].score));
        }
    }

    #[test]
    fn pruning_bounds_out_degree((n, r, edges) in graph_strategy(20, 120), pi in 1usize..6, values in prop::collection::vec(0.1f64..2.0, 7)) {
        let g = build(n, r, &edges);
        let pg = prune_graph(&g, &embeddings(n, r, &values), pi).unwrap();
        for e in 0..n {
            let kept = pg.graph().neighbors(EntityId(e)).unwrap().len();
            let before = g.neighbors(EntityId(e)).unwrap().len();
            prop_assert_eq!(kept, before.min(pi));
        }
        prop_assert!(pg.graph().triplets().iter().all(|t| g.contains(t)));
    }

    #[test]
    fn meta_graphs_satisfy_invariants(
        (n, r, edges) in graph_strategy(15, 60),
        pi in 1usize..5,
        k in 1usize..4,
        frontier in 1usize..50,
        q in prop::collection::vec(0u32..15, 1..4),
        s in prop::collection::vec(0u32..15, 1..4),
    ) {
        let g = build(n, r, &edges);
        let pg = prune_graph(&g, &embeddings(n, r, &[0.5, 1.0, 0.25]), pi).unwrap();
        let lex = EntityLexicon::from_graph(&g);
        let words = WordEmbeddingTable::from_pairs(1, Vec::new()).unwrap();
        let text = |ids: &[u32]| ids.iter().map(|i| format!("n{}", i % n)).collect::<Vec<_>>().join(" ");
        let cfg = MetaGraphConfig { max_hops: k, max_frontier: frontier };
        let mg = build_meta_graph(&text(&q), &text(&s), &pg, &lex, &words, &cfg).unwrap();
        prop_assert!(mg.check_invariants(&pg, k).is_ok());
        prop_assert!(mg.paths.iter().all(|p| p.hops() >= 1 && p.hops() <= k));
    }

    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-30.0f64..30.0, 1..40), cols in 1usize..6) {
        let rows = values.len().div_ceil(cols);
        let mut data = values.clone();
        data.resize(rows * cols, 0.0);
        let s = softmax_rows(&Matrix::from_vec(rows, cols, data).unwrap());
        for r in 0..rows {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(s.row(r).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn segment_softmax_sums_to_one_per_segment(entries in prop::collection::vec((-30.0f64..30.0, 0usize..5), 1..40)) {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_vec(entries.len(), 1, entries.iter().map(|e| e.0).collect()).unwrap());
        let segments: Vec<usize> = entries.iter().map(|e| e.1).collect();
        let y = tape.segment_softmax(x, &segments).unwrap();
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, s) in segments.iter().enumerate() {
            *sums.entry(*s).or_default() += tape.value(y).get(i, 0);
        }
        prop_assert!(sums.values().all(|s| (s - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn tokenized_pairs_fit_the_budget(q in "[a-e ]{1,40}", p in "[a-e. ]{0,200}", max_len in 8usize..40) {
        prop_assume!(!kerm::text::tokenize(&q).is_empty());
        let vocab = Vocab::build(["a b c d e"]);
        let pair = tokenize_pair(&q, &p, &vocab, max_len).unwrap();
        prop_assert!(pair.len() <= max_len);
        prop_assert_eq!(pair.ids.len(), pair.segments.len());
    }

    #[test]
    fn graph_tsv_round_trips((n, r, edges) in graph_strategy(12, 40)) {
        let g = build(n, r, &edges);
        let back = KnowledgeGraph::parse_tsv(&g.to_tsv(), "g", &RelationMergeMap::identity()).unwrap();
        let names = |g: &KnowledgeGraph| -> BTreeSet<(String, String, String)> {
            g.triplets()
                .iter()
                .map(|t| {
                    (
                        g.entity_name(t.head).unwrap().to_string(),
                        g.relation_name(t.relation).unwrap().to_string(),
                        g.entity_name(t.tail).unwrap().to_string(),
                    )
                })
                .collect()
        };
        prop_assert_eq!(names(&back), names(&g));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn rerank_permutes_each_candidate_list(seed in 0u64..1000) {
        let f = fixture();
        let params = f.model.init_params(seed);
        let run = rerank(&f.model, &params, &f.data, "perm").unwrap();
        let per_query = run.per_query();
        for q in &f.data {
            let got: BTreeSet<&str> = per_query[q.qid.as_str()].iter().map(|r| r.pid.as_str()).collect();
            let expected: BTreeSet<&str> = q.candidates.iter().map(|c| c.pid.as_str()).collect();
            prop_assert_eq!(got.len(), q.candidates.len());
            prop_assert_eq!(got, expected);
        }
    }
}
