use std::collections::BTreeMap;
use std::path::Path;

use super::{check_probability, ProbabilityProvider, ProviderError};
use crate::corpus::FunctionRecord;

/// Precomputed probabilities from a JSON object `{"<id>": <probability>, ...}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FileProvider {
    model_id: String,
    probabilities: BTreeMap<String, f64>,
}

impl FileProvider {
    pub fn from_map(
        model_id: impl Into<String>,
        probabilities: BTreeMap<String, f64>,
    ) -> Result<Self, ProviderError> {
        for (id, p) in &probabilities {
            check_probability(id, *p)?;
        }
        Ok(Self {
            model_id: model_id.into(),
            probabilities,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|source| ProviderError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let map: BTreeMap<String, f64> =
            serde_json::from_str(&text).map_err(|e| ProviderError::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "file".into());
        Self::from_map(format!("file:{name}"), map)
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

impl ProbabilityProvider for FileProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score(&self, record: &FunctionRecord) -> Result<f64, ProviderError> {
        self.probabilities
            .get(&record.id)
            .copied()
            .ok_or_else(|| ProviderError::MissingId(record.id.clone()))
    }

    fn score_batch(&self, records: &[&FunctionRecord]) -> Result<Vec<f64>, ProviderError> {
        let missing: Vec<String> = records
            .iter()
            .filter(|r| !self.probabilities.contains_key(&r.id))
            .map(|r| r.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(ProviderError::MissingIds(missing));
        }
        Ok(records.iter().map(|r| self.probabilities[&r.id]).collect())
    }
}
