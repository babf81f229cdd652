//! Cross-encoder scorer with a knowledge injector.

mod checkpoint;
mod config;
mod knowledge;
mod network;
mod vocab;

pub use checkpoint::ModelCheckpoint;
pub use config::{KermConfig, Mode};
pub use knowledge::{align_entities, EntityAlignment, KnowledgeInput, NeighborEntry};
pub use network::{ForwardTrace, GmnAttention, Kerm, ParamGroup, ParamSpec};
pub use vocab::{tokenize_pair, TokenizedPair, Vocab, CLS, SEP, UNK};

#[cfg(test)]
mod tests;
