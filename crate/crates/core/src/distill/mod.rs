//! Knowledge-graph distillation: global top-Π pruning and per-pair
//! meta-graph construction.

mod lexicon;
mod metagraph;
mod prune;
mod sentences;

pub use lexicon::{recognize_entities, EntityLexicon, Mention, Span};
pub use metagraph::{
    build_meta_graph, discover_paths, meta_graph_stats, parse_meta_graphs, write_meta_graphs, MetaGraph,
    MetaGraphBuilder, MetaGraphConfig, MetaGraphRecord, MetaGraphStats, MetaPath, DEFAULT_MAX_FRONTIER,
    DEFAULT_MAX_HOPS,
};
pub use prune::{edge_order, prune_graph, PrunedGraph, DEFAULT_PI};
pub use sentences::{select_key_sentence, split_sentences, KeySentence};
