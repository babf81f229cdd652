use super::*;
use crate::embed::KgEmbeddings;
use crate::kg::{EntityId, RelationId, Triplet};
use crate::numerics::{grad_check, Matrix};

fn tiny(mode: Mode, injector_layers: usize) -> KermConfig {
    KermConfig {
        text_layers: 1,
        injector_layers,
        gmn_layers: 2,
        hidden: 8,
        ffn: 8,
        entity_dim: 4,
        heads: 2,
        max_len: 24,
        mode,
        share_gmn: false,
        ln_eps: 1e-5,
    }
}

fn embeddings() -> KgEmbeddings {
    let e = Matrix::from_vec(5, 4, (0..20).map(|i| ((i * 7 % 11) as f64 - 5.0) / 6.0).collect()).unwrap();
    let r = Matrix::from_vec(2, 4, (0..8).map(|i| ((i * 3 % 5) as f64 - 2.0) / 3.0).collect()).unwrap();
    KgEmbeddings::new(e, r).unwrap()
}

fn edges() -> Vec<Triplet> {
    let t = |h, r, t| Triplet { head: EntityId(h), relation: RelationId(r), tail: EntityId(t) };
    vec![t(0, 0, 3), t(3, 1, 1), t(0, 1, 2), t(2, 0, 1)]
}

fn fixture() -> (Vocab, TokenizedPair, KnowledgeInput) {
    let vocab = Vocab::build(["alpha beta gamma delta epsilon"]);
    let pair = tokenize_pair("alpha beta", "gamma delta epsilon", &vocab, 24).unwrap();
    let nodes = [EntityId(0), EntityId(1), EntityId(2), EntityId(3)];
    let know = KnowledgeInput::from_parts(&nodes, &edges(), &[(EntityId(0), 1), (EntityId(1), 5)], &embeddings()).unwrap();
    (vocab, pair, know)
}

#[test]
fn every_mode_scores_finitely() {
    let (vocab, pair, know) = fixture();
    for mode in [Mode::Full, Mode::NoPropagation, Mode::NoInteraction, Mode::Vanilla] {
        let m = Kerm::new(tiny(mode, 2), vocab.len()).unwrap();
        let p = m.init_params(1);
        m.check_params(&p).unwrap();
        let s = m.score(&p, &pair, &know).unwrap();
        assert!(s.is_finite(), "{mode:?}");
        assert_eq!(s.to_bits(), m.score(&p, &pair, &know).unwrap().to_bits());
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (vocab, pair, know) = fixture();
    for mode in [Mode::Full, Mode::NoInteraction] {
        let m = Kerm::new(tiny(mode, 2), vocab.len()).unwrap();
        let p = m.init_params(5);
        let r = grad_check(|p| m.score_with_grad(p, &pair, &know, 1.0), &p, 1e-5, 1e-4).unwrap();
        assert!(r.passed, "{mode:?}: {r:?}");
    }
}

#[test]
fn full_mode_reads_the_graph_with_two_injector_layers() {
    let (vocab, pair, know) = fixture();
    let m = Kerm::new(tiny(Mode::Full, 2), vocab.len()).unwrap();
    let p = m.init_params(2);
    let with = m.score(&p, &pair, &know).unwrap();
    let mut other = know.clone();
    other.entity_vecs = other.entity_vecs.scale(-1.0);
    assert_ne!(with, m.score(&p, &pair, &other).unwrap());
}

#[test]
fn gmn_attention_normalizes_per_node() {
    let (vocab, _, know) = fixture();
    let m = Kerm::new(tiny(Mode::Full, 2), vocab.len()).unwrap();
    let p = m.init_params(4);
    let (out, att) = m.gmn_forward(&p, 1, &know.entity_vecs, &know).unwrap();
    assert_eq!(out.shape(), (4, 4));
    assert_eq!(att.len(), 2);
    for a in &att {
        for node in 0..4 {
            let s: f64 = a.weights.iter().zip(&a.segments).filter(|(_, &g)| g == node).map(|(w, _)| w).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn param_groups() {
    let m = Kerm::new(tiny(Mode::Full, 1), 10).unwrap();
    assert_eq!(m.param_group("embed.token"), ParamGroup::Encoder);
    assert_eq!(m.param_group("layer.0.attn.q.w"), ParamGroup::Encoder);
    assert_eq!(m.param_group("layer.1.attn.q.w"), ParamGroup::Injector);
    assert_eq!(m.param_group("head.w"), ParamGroup::Injector);
}

#[test]
fn oversized_pair_is_rejected() {
    let (vocab, pair, know) = fixture();
    let m = Kerm::new(KermConfig { max_len: 6, ..tiny(Mode::Full, 1) }, vocab.len()).unwrap();
    let p = m.init_params(1);
    assert!(m.score(&p, &pair, &know).is_err());
}
