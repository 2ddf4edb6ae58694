//! Deduplication metrics and experiment orchestration.

mod config;
mod experiment;
mod metrics;

pub use config::{ExperimentConfig, Method};
pub use experiment::{
    builtin_encoder, fit_ranker, preprocess_config, run_experiment, run_experiment_on, tune_encoder, summarize, time_split_sweep, write_metrics_table, write_outcomes_csv,
    EncoderSummary, EvalReport, Experiment, MetricRow, Provenance, QueryCounts, RankerSummary, SplitSummary, Sweep,
    Timing, TFIDF_VARIANT,
};
pub use metrics::{mrr, recall_at_k, roc_auc, RankingOutcome};
