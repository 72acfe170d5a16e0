//! End-to-end runs, metrics and reports.

use std::fmt;

use serde::{Deserialize, Serialize};

mod config;
pub mod metrics;
mod pipeline;
pub mod report;

pub use config::{
    CorpusSection, CotMode, PromptMode, PromptSection, RunConfig, StaticSection, SyntheticSpec,
    TaxonomySection,
};
pub use metrics::{confusion, cv, fpr, mcc, precision_recall_f1, ConfusionCounts, MetricsError, MetricsReport};
pub use pipeline::{
    build_index, prepare, results_from_jsonl, results_to_jsonl, run_pipeline, run_pipeline_with,
    score_results, write_prompt_dump, PreparedRun, RunManifest, RunOutcome, SamplePrompt,
    SampleResult, TURN_SEPARATOR,
};
pub use report::{emit_report, load_run, report_rows, ReportFormat, ReportRow};

/// Per-sample pipeline stage, named in errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Predict,
    Retrieve,
    Icl,
    Scan,
    Cot,
    Assemble,
    Detect,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Predict => "predict",
            Stage::Retrieve => "retrieve",
            Stage::Icl => "icl",
            Stage::Scan => "scan",
            Stage::Cot => "cot",
            Stage::Assemble => "assemble",
            Stage::Detect => "detect",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("run config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Setup {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("sample {id}, stage {stage}: {source}")]
    Sample {
        id: String,
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
