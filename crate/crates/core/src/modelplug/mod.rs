//! Detection-probability providers.
//!
//! A provider maps a function to the probability that it is vulnerable. Three
//! kinds are supported: a precomputed id -> probability file, a remote HTTP
//! model server, and a built-in bag-of-tokens logistic regression.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{FunctionRecord, Label};

mod builtin;
mod file;
mod http;

pub use builtin::{
    featurize, logistic_loss_and_gradient, train_builtin, BuiltinClassifier, BuiltinHyperparams,
    SparseFeatures, TrainingManifest,
};
pub use file::FileProvider;
pub use http::{HttpProvider, PredictBatchRequest, PredictBatchResponse, PredictRequest, PredictResponse};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("no probability for function \"{0}\"")]
    MissingId(String),
    #[error("no probability for functions: {}", .0.join(", "))]
    MissingIds(Vec<String>),
    #[error("batch prediction failed for {}: {cause}", .ids.join(", "))]
    BatchFailed { ids: Vec<String>, cause: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("training: {0}")]
    Training(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub probability: f64,
    pub verdict: Label,
    pub model_id: String,
    pub threshold: f64,
}

impl ModelPrediction {
    pub fn new(probability: f64, threshold: f64, model_id: impl Into<String>) -> Self {
        Self {
            probability,
            verdict: Label::from_bool(probability >= threshold),
            model_id: model_id.into(),
            threshold,
        }
    }
}

pub(crate) fn check_probability(id: &str, p: f64) -> Result<f64, ProviderError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(ProviderError::Protocol(format!(
            "probability {p} for \"{id}\" is outside [0, 1]"
        )))
    }
}

/// Raw probability source. Implementations must be deterministic for a given
/// state and input.
pub trait ProbabilityProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn score(&self, record: &FunctionRecord) -> Result<f64, ProviderError>;

    /// Order-preserving batch scoring; the default scores one at a time and
    /// reports every failed id.
    fn score_batch(&self, records: &[&FunctionRecord]) -> Result<Vec<f64>, ProviderError> {
        let mut out = Vec::with_capacity(records.len());
        let mut failed = Vec::new();
        let mut cause = None;
        for record in records {
            match self.score(record) {
                Ok(p) => out.push(p),
                Err(e) => {
                    failed.push(record.id.clone());
                    cause.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if failed.is_empty() {
            Ok(out)
        } else {
            Err(ProviderError::BatchFailed {
                ids: failed,
                cause: cause.unwrap_or_default(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    File,
    Http,
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// File path (file, builtin) or base URL (http). A builtin provider without
    /// a location is trained on the run's training split.
    #[serde(default)]
    pub location: Option<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_in_flight() -> usize {
    4
}

impl ProviderConfig {
    pub fn builtin() -> Self {
        Self {
            kind: ProviderKind::Builtin,
            location: None,
            threshold: DEFAULT_THRESHOLD,
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ProviderError::Config(format!(
                "threshold {} is outside [0, 1]",
                self.threshold
            )));
        }
        match (self.kind, self.location.as_deref()) {
            (ProviderKind::File | ProviderKind::Http, None | Some("")) => Err(
                ProviderError::Config(format!("{:?} provider requires a location", self.kind)),
            ),
            _ => Ok(()),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// A probability source paired with its decision threshold.
pub struct Provider {
    inner: Box<dyn ProbabilityProvider>,
    threshold: f64,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider")
            .field("model_id", &self.inner.model_id())
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl Provider {
    pub fn new(inner: Box<dyn ProbabilityProvider>, threshold: f64) -> Self {
        Self { inner, threshold }
    }

    /// Opens a provider from its configuration. Builtin providers need a
    /// model file here; training happens in the pipeline.
    pub fn open(config: &ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let location = config.location.clone().unwrap_or_default();
        let inner: Box<dyn ProbabilityProvider> = match config.kind {
            ProviderKind::File => Box::new(FileProvider::load(location.as_ref())?),
            ProviderKind::Http => Box::new(HttpProvider::new(
                &location,
                config.timeout(),
                config.max_in_flight,
            )?),
            ProviderKind::Builtin => {
                if location.is_empty() {
                    return Err(ProviderError::Config(
                        "builtin provider needs a model file or a training split".into(),
                    ));
                }
                Box::new(BuiltinClassifier::load(location.as_ref())?)
            }
        };
        Ok(Self::new(inner, config.threshold))
    }

    pub fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn predict(&self, record: &FunctionRecord) -> Result<ModelPrediction, ProviderError> {
        let p = check_probability(&record.id, self.inner.score(record)?)?;
        Ok(ModelPrediction::new(p, self.threshold, self.inner.model_id()))
    }

    pub fn predict_batch(
        &self,
        records: &[&FunctionRecord],
    ) -> Result<Vec<ModelPrediction>, ProviderError> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let probs = self.inner.score_batch(records)?;
        if probs.len() != records.len() {
            return Err(ProviderError::Protocol(format!(
                "batch of {} returned {} probabilities",
                records.len(),
                probs.len()
            )));
        }
        records
            .iter()
            .zip(probs)
            .map(|(r, p)| {
                let p = check_probability(&r.id, p)?;
                Ok(ModelPrediction::new(p, self.threshold, self.inner.model_id()))
            })
            .collect()
    }
}
