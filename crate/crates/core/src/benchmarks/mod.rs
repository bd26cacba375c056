//! Perturbation consistency, replicate consistency and relationship recall.

mod consistency;
mod recall;
mod replicate;
mod similarity;

pub use consistency::{
    group_key, perturbation_consistency, ConsistencyReport, ConsistencyResult, ExperimentConsistency,
    GroupBy, SkipReason, SkippedGroup,
};
pub use recall::{
    aggregate_gene_embeddings, prepare_gene_aggregates, relationship_recall, relationship_recall_many,
    AggregateOutcome, RecallReport,
};
pub use replicate::{
    matched_representatives, replicate_consistency, ReplicatePairResult, ReplicateReport,
};
pub use similarity::{
    pairwise_similarity_matrix, PairwiseSimilarities, SimilarityTile, Thresholds, DEFAULT_TILE,
    HISTOGRAM_BINS,
};
