//! Training loops and downstream evaluation.

mod link;
mod node;
mod probe;
mod report;

use thiserror::Error;

pub use link::{
    evaluate_link_checkpoint, lightgcn_propagate, prepare_link, rank_eval, sample_bpr_triples, split_interactions, train_link, InteractionSplit,
    LinkEmbeddings, LinkModel, LinkTrained,
};
pub use node::{
    build_sample_sets_for, pretrain_node, pretrain_with_sets, resolve_metapaths, Embeddings, MetaPathBranch, NodeForward, NodeLosses, NodeModel, Pretrained,
};
pub use probe::{f1_scores, linear_probe, majority_class_report, probe_once, select_embedding, softmax_cross_entropy, ProbeConfig};
pub use report::{mean_std, MetricsReport};

/// Training configuration: the run configuration as parsed from disk.
pub type TrainConfig = crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("class {class} has {available} labelled nodes, {required} required")]
    InsufficientLabels { class: usize, available: usize, required: usize },
    #[error("no labelled nodes of the target type")]
    NoLabels,
    #[error("no test user has a held-out interaction")]
    NoTestInteractions,
    #[error("embedding has {rows} rows but {expected} nodes are labelled")]
    RowMismatch { rows: usize, expected: usize },
    #[error("invalid training setup: {0}")]
    Setup(String),
}
