//! Fine-tuning, re-ranking and TREC-style evaluation.

mod metrics;
mod train;
mod trec;

pub use metrics::{evaluate, map_at_k, mrr_at_k, EvalReport};
pub use train::{
    build_examples, build_meta_graphs, finetune_loss, index_meta_graphs, prepare_examples, rerank, sample_batch, slot_loss_and_grad, train, Adam, Candidate,
    EpochLog, MetaGraphIndex, PreparedCandidate, PreparedQuery, RerankExample, SkipReason, TrainBatch, TrainConfig,
    TrainOutcome,
};
pub use trec::{load_id_text, parse_id_text, write_id_text, Qrels, RunFile, RunRow, RELEVANT_GRADE};
