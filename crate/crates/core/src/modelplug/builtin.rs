//! Bag-of-tokens logistic regression, the hermetic default provider.
//!
//! Features are `ln(1 + count)` per vocabulary token, L2-normalised per
//! function. Training is full-batch gradient descent on mean cross-entropy
//! with an L2 penalty; a step that would raise the loss is retried at half
//! the learning rate, so the recorded loss history never increases.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ProbabilityProvider, ProviderError};
use crate::corpus::{Corpus, FunctionRecord};
use crate::simindex::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuiltinHyperparams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub max_vocabulary: usize,
    pub seed: u64,
}

impl Default for BuiltinHyperparams {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 2.0,
            l2: 1e-4,
            max_vocabulary: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub train_size: usize,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinClassifier {
    pub model_id: String,
    /// Token -> weight.
    pub vocabulary: BTreeMap<String, f64>,
    pub bias: f64,
    pub manifest: TrainingManifest,
}

/// Sparse feature vector: (vocabulary position, value), positions ascending.
pub type SparseFeatures = Vec<(usize, f64)>;

/// Normalised log-count features of `source` over `vocab` (token -> position).
pub fn featurize(source: &str, vocab: &HashMap<&str, usize>) -> SparseFeatures {
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for tok in tokenize(source) {
        if let Some(&pos) = vocab.get(tok) {
            *counts.entry(pos).or_default() += 1;
        }
    }
    let mut features: SparseFeatures = counts
        .into_iter()
        .map(|(pos, c)| (pos, f64::from(c).ln_1p()))
        .collect();
    let norm = features.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut features {
            *v /= norm;
        }
    }
    features
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn dot(weights: &[f64], x: &SparseFeatures) -> f64 {
    x.iter().map(|(i, v)| weights[*i] * v).sum()
}

/// Mean cross-entropy plus `l2 / 2 * |w|^2`, with its gradient
/// `(loss, d_loss/d_weights, d_loss/d_bias)`. Labels are 0.0 or 1.0.
pub fn logistic_loss_and_gradient(
    weights: &[f64],
    bias: f64,
    features: &[SparseFeatures],
    labels: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = features.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    let mut grad_bias = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z = dot(weights, x) + bias;
        loss += softplus(z) - y * z;
        let residual = sigmoid(z) - y;
        for (i, v) in x {
            grad[*i] += residual * v;
        }
        grad_bias += residual;
    }
    loss /= n;
    grad_bias /= n;
    let mut penalty = 0.0;
    for (g, w) in grad.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
        penalty += w * w;
    }
    (loss + 0.5 * l2 * penalty, grad, grad_bias)
}

fn build_vocabulary(corpus: &Corpus, max: usize) -> Vec<String> {
    let mut doc_freq: HashMap<&str, usize> = HashMap::new();
    for record in corpus.records() {
        let mut tokens = tokenize(&record.source);
        tokens.sort_unstable();
        tokens.dedup();
        for tok in tokens {
            *doc_freq.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = doc_freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max);
    let mut vocab: Vec<String> = ranked.into_iter().map(|(t, _)| t.to_owned()).collect();
    vocab.sort();
    vocab
}

pub fn train_builtin(
    train: &Corpus,
    hyper: &BuiltinHyperparams,
) -> Result<BuiltinClassifier, ProviderError> {
    if train.is_empty() {
        return Err(ProviderError::Training("training corpus is empty".into()));
    }
    let counts = train.label_counts();
    if counts.vulnerable == 0 || counts.benign == 0 {
        return Err(ProviderError::Training(format!(
            "training corpus needs both labels (vulnerable {}, benign {})",
            counts.vulnerable, counts.benign
        )));
    }
    if !(hyper.learning_rate.is_finite() && hyper.learning_rate > 0.0) || hyper.l2 < 0.0 {
        return Err(ProviderError::Training(
            "learning rate must be positive and l2 non-negative".into(),
        ));
    }

    let vocab = build_vocabulary(train, hyper.max_vocabulary.max(1));
    let positions: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let features: Vec<SparseFeatures> = train
        .records()
        .iter()
        .map(|r| featurize(&r.source, &positions))
        .collect();
    let labels: Vec<f64> = train
        .records()
        .iter()
        .map(|r| f64::from(r.label.as_u8()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut weights: Vec<f64> = (0..vocab.len()).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let mut bias = 0.0;
    let (mut loss, mut grad, mut grad_bias) =
        logistic_loss_and_gradient(&weights, bias, &features, &labels, hyper.l2);
    let mut history = vec![loss];

    for _ in 0..hyper.epochs {
        let mut step = hyper.learning_rate;
        loop {
            let trial: Vec<f64> = weights.iter().zip(&grad).map(|(w, g)| w - step * g).collect();
            let trial_bias = bias - step * grad_bias;
            let (trial_loss, trial_grad, trial_grad_bias) =
                logistic_loss_and_gradient(&trial, trial_bias, &features, &labels, hyper.l2);
            if trial_loss <= loss || step < 1e-12 {
                if trial_loss <= loss {
                    weights = trial;
                    bias = trial_bias;
                    loss = trial_loss;
                    grad = trial_grad;
                    grad_bias = trial_grad_bias;
                }
                break;
            }
            step *= 0.5;
        }
        history.push(loss);
    }

    if !weights.iter().all(|w| w.is_finite()) || !bias.is_finite() {
        return Err(ProviderError::Training("training diverged".into()));
    }

    Ok(BuiltinClassifier {
        model_id: format!("builtin-logreg-s{}", hyper.seed),
        vocabulary: vocab.into_iter().zip(weights).collect(),
        bias,
        manifest: TrainingManifest {
            seed: hyper.seed,
            epochs: hyper.epochs,
            learning_rate: hyper.learning_rate,
            l2: hyper.l2,
            train_size: train.len(),
            loss_history: history,
        },
    })
}

impl BuiltinClassifier {
    pub fn probability(&self, source: &str) -> f64 {
        let mut counts: BTreeMap<&str, (f64, u32)> = BTreeMap::new();
        for tok in tokenize(source) {
            if let Some(w) = self.vocabulary.get(tok) {
                counts.entry(tok).or_insert((*w, 0)).1 += 1;
            }
        }
        let norm = counts
            .values()
            .map(|(_, c)| f64::from(*c).ln_1p().powi(2))
            .sum::<f64>()
            .sqrt();
        let z = if norm > 0.0 {
            counts
                .values()
                .map(|(w, c)| w * f64::from(*c).ln_1p())
                .sum::<f64>()
                / norm
        } else {
            0.0
        };
        sigmoid(z + self.bias)
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProviderError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: Self = serde_json::from_str(&text).map_err(|e| ProviderError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if !model.vocabulary.values().all(|w| w.is_finite()) || !model.bias.is_finite() {
            return Err(ProviderError::Parse {
                path: path.to_path_buf(),
                message: "non-finite weights".into(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text).map_err(|source| ProviderError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl ProbabilityProvider for BuiltinClassifier {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score(&self, record: &FunctionRecord) -> Result<f64, ProviderError> {
        Ok(self.probability(&record.source))
    }
}
