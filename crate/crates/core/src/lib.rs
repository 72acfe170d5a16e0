//! Prompt synthesis for LLM-based vulnerability detection.
//!
//! A detection prompt is built from two halves: reference functions retrieved
//! by MinHash/LSH similarity and annotated with a detection model's
//! probabilities, and a five-step reasoning chain selected from a category
//! library by a key that combines static-analyzer findings with the model's
//! verdict. The crate also carries the evaluation harness that drives an LLM
//! over a test split and scores it.

pub mod corpus;
pub mod evalharness;
pub mod llmclient;
pub mod modelplug;
pub mod promptgen;
pub mod simindex;
pub mod staticscan;
pub mod sync;
pub mod taxonomy;

pub use corpus::{Corpus, DatasetSplit, FunctionRecord, Label};
pub use evalharness::{
    run_pipeline, ConfusionCounts, MetricsReport, PipelineError, PromptMode, RunConfig, RunOutcome,
};
pub use llmclient::{Decision, LlmClient, LlmConfig, Verdict};
pub use modelplug::{ModelPrediction, Provider, ProviderConfig};
pub use promptgen::{AugmentedPrompt, BaselineKind, CotBlock, IclBlock};
pub use simindex::{LshIndex, LshParams, MinHashSignature};
pub use staticscan::{RankedCategories, StaticFinding};
pub use taxonomy::{CotLibrary, QueryKey};
