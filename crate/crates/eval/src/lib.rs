//! Replication benchmark: fixed task prompts, suite execution over
//! pluggable runners, result extraction and the metric battery.

pub mod metrics;
pub mod render;
pub mod suite;
pub mod task;

use thiserror::Error;

pub use metrics::{
    aggregate_metrics, classify_replication, relative_error, significance_level, MetricReport, PPerfectMode,
    Rate, ReplicationClass,
};
pub use render::{render_report, ReportFormat};
pub use suite::{
    extract_result, extract_result_file, run_suite, AgentRunner, Extracted, FailingRunner, RunRecord, Runner,
    SubprocessRunner, SuiteOptions,
};
pub use task::{build_prompt, load_corpus, parse_corpus, Expected, MethodFamily, TaskSpec, TaskTag};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no JSON object with coefficient, standard_error and p-value found")]
    NoResultFound,
    #[error("bad task corpus: {0}")]
    Corpus(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("unknown report format '{0}'")]
    UnknownFormat(String),
}
