//! Early-exit scoring for additive regression-tree ranking ensembles.
//!
//! Documents of a query are scored with a prefix of the ensemble up to a
//! sentinel tree. An exit strategy then decides which documents keep
//! traversing the remaining trees:
//!
//! - rank threshold (ERT): keep the top `k_s` at the sentinel;
//! - proximity threshold (EPT): keep everything within `p` of the `k_s`-th score;
//! - learned (LEAR): keep what a small boosted classifier calls Continue;
//! - ideal: an oracle keeping the shortest prefix that holds the final top-k.
//!
//! [`experiment`] compares each strategy with the full ensemble in terms of
//! NDCG@k and tree-traversal speedup.

pub mod data;
pub mod ensemble;
pub mod exitset;
pub mod experiment;
pub mod gbdt;
pub mod lightgbm;
pub mod metrics;
pub mod scorer;
pub mod strategies;
pub mod synth;

pub use data::{load_dataset, parse_letor_line, Dataset, DatasetStats, Document, QueryGroup};
pub use ensemble::{load_native, save_native, Ensemble, Tree};
pub use exitset::{build_exit_training_set, ExitExample, ExitLabel};
pub use gbdt::{train_forest, Forest, Loss, TrainParams};
pub use lightgbm::parse_lightgbm_text;
pub use metrics::{ndcg_at_k, CostMode, TradeoffPoint};
pub use scorer::{Backend, ScoringState, Sentinel, TraversalCost};
pub use strategies::{run_pipeline, ExitDecision, MergeRule, PipelineOptions, StrategyParams};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Ensemble(#[from] ensemble::EnsembleError),
    #[error(transparent)]
    Scoring(#[from] scorer::ScoringError),
    #[error(transparent)]
    Strategy(#[from] strategies::StrategyError),
    #[error(transparent)]
    ExitSet(#[from] exitset::ExitSetError),
    #[error(transparent)]
    Gbdt(#[from] gbdt::GbdtError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

/// Loads a ranker from either the native JSON schema or a LightGBM text dump,
/// picking by content.
pub fn load_model_text(text: &str) -> Result<Ensemble, ensemble::EnsembleError> {
    if text.trim_start().starts_with('{') {
        load_native(text)
    } else {
        parse_lightgbm_text(text)
    }
}
