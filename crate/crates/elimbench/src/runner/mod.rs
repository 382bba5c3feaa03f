//! Experiment orchestration: config-driven runs with caching and bounded
//! parallelism, persisted run records, report tables, and manual error
//! annotations.

mod annotate;
mod config;
mod record;
mod report;
mod run;

pub use annotate::{
    annotate_errors, load_annotations, summarize, AnnotationSummary, ErrorAnnotation,
    ErrorCategory,
};
pub use config::ExperimentConfig;
pub use record::{cache_key, params_hash, CachedBackend, CompletionCache, RunRecord, Transcript};
pub use report::{emit_report, AccuracyRow, ConsistencyRow, IterativeRow, ReportDoc};
pub use run::{resolve_eval_questions, run_experiment, run_experiment_with_backend};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error("io on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: String, msg: String },
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Prompt(#[from] crate::prompting::PromptError),
    #[error(transparent)]
    Backend(#[from] crate::backend::BackendError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Iterative(#[from] crate::iterative::IterativeError),
    #[error("experiment incomplete ({reason}); partial record persisted at {path}")]
    Incomplete {
        reason: String,
        path: String,
        record: Box<RunRecord>,
    },
    #[error("no run records given")]
    NoRecords,
    #[error("records mix datasets `{0}` and `{1}`")]
    MixedDatasets(String, String),
    #[error("record references question `{0}` not present in the question set")]
    UnknownQuestion(String),
    #[error("annotation references unknown question `{0}`")]
    UnknownAnnotationTarget(String),
}
