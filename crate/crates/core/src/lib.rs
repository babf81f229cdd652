//! Knowledge-enhanced passage re-ranking at desk scale.
//!
//! The pipeline distills a noisy knowledge graph into per-pair meta-graphs
//! and feeds them to a cross-encoder whose upper layers inject and propagate
//! entity knowledge:
//!
//! 1. [`kg`] loads triples and merges relation types.
//! 2. [`embed`] trains translation embeddings, scores triplet reliability and
//!    word-vector relevance.
//! 3. [`distill`] prunes the graph and builds query-passage meta-graphs.
//! 4. [`model`] is the text encoder, knowledge injector and graph network.
//! 5. [`rank`] fine-tunes, re-ranks and evaluates with TREC files.
//!
//! [`numerics`] is the small matrix and reverse-mode gradient substrate the
//! model is built on.

pub mod distill;
pub mod embed;
pub mod error;
pub mod kg;
pub mod model;
pub mod numerics;
pub mod rank;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
