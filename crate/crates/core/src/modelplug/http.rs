//! Client side of the model-server protocol:
//!
//! * `POST /predict` `{"id", "code"}` -> `{"probability"}`
//! * `POST /predict_batch` `{"ids": [..], "codes": [..]}` -> `{"probabilities": [..]}`
//! * `GET /health` -> 200

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_probability, ProbabilityProvider, ProviderError};
use crate::corpus::FunctionRecord;
use crate::sync::Semaphore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub id: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictBatchRequest {
    pub ids: Vec<String>,
    pub codes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictBatchResponse {
    pub probabilities: Vec<f64>,
}

#[derive(Debug)]
pub struct HttpProvider {
    base: String,
    model_id: String,
    client: reqwest::blocking::Client,
    in_flight: Semaphore,
}

impl HttpProvider {
    pub fn new(base_url: &str, timeout: Duration, max_in_flight: usize) -> Result<Self, ProviderError> {
        let base = base_url.trim_end_matches('/').to_owned();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ProviderError::Config(format!(
                "http provider location must be an http(s) URL, got \"{base_url}\""
            )));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self {
            model_id: format!("http:{base}"),
            base,
            client,
            in_flight: Semaphore::new(max_in_flight),
        })
    }

    pub fn health(&self) -> Result<(), ProviderError> {
        let _permit = self.in_flight.acquire();
        let resp = self
            .client
            .get(format!("{}/health", self.base))
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(ProviderError::Protocol(format!(
                "health check returned {}",
                resp.status()
            )))
        }
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ProviderError> {
        let _permit = self.in_flight.acquire();
        let resp = self
            .client
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ProviderError::Protocol(format!("{path} returned {status}")));
        }
        resp.json::<Resp>()
            .map_err(|e| ProviderError::Protocol(format!("{path}: malformed body: {e}")))
    }
}

impl ProbabilityProvider for HttpProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score(&self, record: &FunctionRecord) -> Result<f64, ProviderError> {
        let resp: PredictResponse = self.post(
            "/predict",
            &PredictRequest {
                id: record.id.clone(),
                code: record.source.clone(),
            },
        )?;
        check_probability(&record.id, resp.probability)
    }

    fn score_batch(&self, records: &[&FunctionRecord]) -> Result<Vec<f64>, ProviderError> {
        let request = PredictBatchRequest {
            ids: records.iter().map(|r| r.id.clone()).collect(),
            codes: records.iter().map(|r| r.source.clone()).collect(),
        };
        let resp: PredictBatchResponse =
            self.post("/predict_batch", &request)
                .map_err(|e| ProviderError::BatchFailed {
                    ids: request.ids.clone(),
                    cause: e.to_string(),
                })?;
        if resp.probabilities.len() != records.len() {
            return Err(ProviderError::Protocol(format!(
                "batch of {} returned {} probabilities",
                records.len(),
                resp.probabilities.len()
            )));
        }
        let bad: Vec<String> = records
            .iter()
            .zip(&resp.probabilities)
            .filter(|(_, p)| !(0.0..=1.0).contains(*p))
            .map(|(r, _)| r.id.clone())
            .collect();
        if !bad.is_empty() {
            return Err(ProviderError::Protocol(format!(
                "probabilities outside [0, 1] for {}",
                bad.join(", ")
            )));
        }
        Ok(resp.probabilities)
    }
}
