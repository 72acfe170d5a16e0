use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{CotMode, PromptMode, RunConfig};
use super::metrics::{ConfusionCounts, MetricsReport};
use super::{PipelineError, Stage};
use crate::corpus::{load_corpus, split, synthetic::synthetic_corpus, undersample, Corpus, DatasetSplit, FunctionRecord, Label};
use crate::llmclient::{conversation_hash, parse_verdict, ChatMessage, Decision, LlmClient, UnparseablePolicy};
use crate::modelplug::{train_builtin, ModelPrediction, Provider, ProviderKind, TrainingManifest};
use crate::promptgen::{
    assemble_icl, assemble_prompt, complete_cot, render_baseline, summarize_dataflow, CotCompleter,
    CotSource,
};
use crate::simindex::{read_index, LshIndex, LshParams};
use crate::staticscan::{
    assign_findings, load_findings, load_function_map, map_to_taxonomy, top_k, ScanMapping,
    StaticFinding,
};
use crate::taxonomy::{build_query_key, default_library, load_library, retrieve_guidance, CotLibrary};

type SampleOutcome = Result<(SamplePrompt, SampleResult), PipelineError>;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn setup<E>(stage: &'static str) -> impl FnOnce(E) -> PipelineError
where
    E: std::error::Error + Send + Sync + 'static,
{
    move |e| PipelineError::Setup {
        stage,
        source: Box::new(e),
    }
}

fn at<E>(id: &str, stage: Stage) -> impl FnOnce(E) -> PipelineError + '_
where
    E: std::error::Error + Send + Sync + 'static,
{
    move |e| PipelineError::Sample {
        id: id.to_owned(),
        stage,
        source: Box::new(e),
    }
}

/// Prompt text for one test sample plus what went into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrompt {
    pub id: String,
    /// One entry per user turn.
    pub turns: Vec<String>,
    pub prediction: Option<ModelPrediction>,
    pub key: Option<String>,
    pub guidance: Option<String>,
    pub candidates: Vec<String>,
    pub trimmed: Vec<String>,
    pub cot_source: Option<CotSource>,
}

/// Per-sample outcome, persisted one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub project: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_verdict: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<String>,
    #[serde(default)]
    pub candidates: Vec<String>,
    pub prompt_sha256: String,
    pub decision: Decision,
    pub explanation: String,
    pub response: String,
    pub attempts: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub fn score_results(results: &[SampleResult], policy: UnparseablePolicy) -> MetricsReport {
    let mut counts = ConfusionCounts::default();
    let mut unparseable = 0;
    for r in results {
        if r.decision == Decision::Unparseable {
            unparseable += 1;
        }
        counts.record(r.decision.label(policy), r.label);
    }
    MetricsReport::from_counts(counts, unparseable)
}

pub fn results_to_jsonl(results: &[SampleResult]) -> String {
    results
        .iter()
        .map(|r| serde_json::to_string(r).expect("results serialize") + "\n")
        .collect()
}

pub fn results_from_jsonl(text: &str) -> Result<Vec<SampleResult>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Config(format!("results line {}: {e}", i + 1)))
        })
        .collect()
}

/// Corpus, split, provider, index, library and findings, ready to build
/// prompts for every test sample.
pub struct PreparedRun {
    pub config: RunConfig,
    pub split: DatasetSplit,
    pub provider: Provider,
    pub training: Option<TrainingManifest>,
    pub index: LshIndex,
    pub library: CotLibrary,
    pub mapping: ScanMapping,
    pub corpus_sha256: String,
    findings: HashMap<String, Vec<StaticFinding>>,
    cache: Mutex<HashMap<String, ModelPrediction>>,
}

impl std::fmt::Debug for PreparedRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PreparedRun")
            .field("train", &self.split.train.len())
            .field("test", &self.split.test.len())
            .field("provider", &self.provider)
            .finish()
    }
}

pub fn prepare(config: &RunConfig) -> Result<PreparedRun, PipelineError> {
    config.validate()?;
    let corpus = match (&config.corpus.path, &config.corpus.synthetic) {
        (Some(path), _) => load_corpus(path).map_err(setup("corpus"))?,
        (None, Some(spec)) => synthetic_corpus(spec.size, config.seed, &spec.project),
        (None, None) => unreachable!("validated"),
    };
    let corpus_sha256 = sha256_hex(corpus.to_jsonl().as_bytes());
    let balanced = match config.corpus.undersample_ratio {
        Some(ratio) => undersample(&corpus, ratio, config.seed).map_err(setup("undersample"))?,
        None => corpus,
    };
    let split = split(&balanced, config.corpus.train_fraction, config.seed).map_err(setup("split"))?;

    let (provider, training) = match (config.provider.kind, config.provider.location.as_deref()) {
        (ProviderKind::Builtin, None | Some("")) => {
            let model = train_builtin(&split.train, &config.training).map_err(setup("train"))?;
            let manifest = model.manifest.clone();
            (
                Provider::new(Box::new(model), config.provider.threshold),
                Some(manifest),
            )
        }
        _ => (Provider::open(&config.provider).map_err(setup("provider"))?, None),
    };

    let index = match &config.index_file {
        Some(path) => load_index_for(path, &split.train)?,
        None => build_index(&split.train, config.index)?,
    };
    let library = match &config.taxonomy.library {
        Some(path) => load_library(path).map_err(setup("taxonomy"))?,
        None => default_library(),
    };
    let mapping = match &config.static_analysis.mapping {
        Some(path) => ScanMapping::load(path).map_err(setup("mapping"))?,
        None => ScanMapping::default_mapping(),
    };
    let mut all_findings = Vec::new();
    for path in &config.static_analysis.findings {
        all_findings.extend(load_findings(path).map_err(setup("findings"))?);
    }
    let spans = match &config.static_analysis.function_map {
        Some(path) => Some(load_function_map(path).map_err(setup("function map"))?),
        None => None,
    };
    let findings = assign_findings(&all_findings, split.test.records(), spans.as_deref())
        .into_iter()
        .map(|(id, fs)| (id, fs.into_iter().cloned().collect()))
        .collect();

    Ok(PreparedRun {
        config: config.clone(),
        split,
        provider,
        training,
        index,
        library,
        mapping,
        corpus_sha256,
        findings,
        cache: Mutex::new(HashMap::new()),
    })
}

pub fn build_index(train: &Corpus, params: LshParams) -> Result<LshIndex, PipelineError> {
    LshIndex::build(
        train.records().iter().map(|r| (r.id.as_str(), r.source.as_str())),
        params,
    )
    .map_err(setup("index"))
}

/// Reads a persisted index and checks that it covers exactly `train`.
fn load_index_for(path: &Path, train: &Corpus) -> Result<LshIndex, PipelineError> {
    let file = std::fs::File::open(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let index = read_index(std::io::BufReader::new(file)).map_err(setup("index"))?;
    let mut indexed: Vec<&str> = index.ids().iter().map(String::as_str).collect();
    let mut expected = train.ids();
    indexed.sort_unstable();
    expected.sort_unstable();
    if indexed != expected {
        return Err(PipelineError::Config(format!(
            "index file {} holds {} ids that do not match the {} training records",
            path.display(),
            indexed.len(),
            expected.len()
        )));
    }
    Ok(index)
}

impl PreparedRun {
    /// Predictions for `records`, scoring only ids not seen before.
    pub fn predict(&self, records: &[&FunctionRecord]) -> Result<Vec<ModelPrediction>, crate::modelplug::ProviderError> {
        let missing: Vec<&FunctionRecord> = {
            let cache = self.cache.lock().expect("cache poisoned");
            records
                .iter()
                .copied()
                .filter(|r| !cache.contains_key(&r.id))
                .collect()
        };
        if !missing.is_empty() {
            let fresh = self.provider.predict_batch(&missing)?;
            let mut cache = self.cache.lock().expect("cache poisoned");
            for (r, p) in missing.iter().zip(fresh) {
                cache.insert(r.id.clone(), p);
            }
        }
        let cache = self.cache.lock().expect("cache poisoned");
        Ok(records.iter().map(|r| cache[&r.id].clone()).collect())
    }

    /// Provider verdicts on the test split scored on their own.
    pub fn provider_metrics(&self) -> Result<MetricsReport, PipelineError> {
        let records: Vec<&FunctionRecord> = self.split.test.records().iter().collect();
        let preds = self.predict(&records).map_err(|e| PipelineError::Sample {
            id: first_missing(&e).unwrap_or_else(|| "<batch>".into()),
            stage: Stage::Predict,
            source: Box::new(e),
        })?;
        let verdicts: Vec<Label> = preds.iter().map(|p| p.verdict).collect();
        let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
        MetricsReport::from_labels(&verdicts, &labels).map_err(setup("metrics"))
    }

    pub fn build_prompt(
        &self,
        target: &FunctionRecord,
        completer: CotCompleter<'_>,
    ) -> Result<SamplePrompt, PipelineError> {
        let id = target.id.as_str();
        if let Some(kind) = self.config.prompt_mode.baseline() {
            let aux = (kind == crate::promptgen::BaselineKind::Auxiliary)
                .then(|| summarize_dataflow(&target.source));
            let prompt = render_baseline(kind, target, aux.as_deref()).map_err(at(id, Stage::Assemble))?;
            return Ok(SamplePrompt {
                id: id.to_owned(),
                turns: prompt.turns(),
                prediction: None,
                key: None,
                guidance: None,
                candidates: Vec::new(),
                trimmed: Vec::new(),
                cot_source: None,
            });
        }

        let prediction = self
            .predict(&[target])
            .map_err(at(id, Stage::Predict))?
            .remove(0);

        let hits = self
            .index
            .query_backfilled(&target.source, self.config.prompt.icl_size)
            .map_err(at(id, Stage::Retrieve))?;
        let neighbours: Vec<&FunctionRecord> = hits
            .iter()
            .filter_map(|c| self.split.train.get(&c.id))
            .collect();
        let neighbour_preds = self.predict(&neighbours).map_err(at(id, Stage::Predict))?;
        let pairs: Vec<(&FunctionRecord, f64)> = neighbours
            .iter()
            .zip(&hits)
            .map(|(r, c)| (*r, c.similarity))
            .collect();
        let icl = assemble_icl(id, &pairs, &neighbour_preds, self.config.prompt.icl_size)
            .map_err(at(id, Stage::Icl))?;

        let findings = self.findings.get(id).map(Vec::as_slice).unwrap_or(&[]);
        let scores = map_to_taxonomy(findings, &self.mapping, &self.library);
        let ranked = top_k(&scores, self.config.static_analysis.top_k).map_err(at(id, Stage::Scan))?;
        let key = build_query_key(&ranked, &prediction);
        let resolved = retrieve_guidance(&self.library, &key);
        let cot = complete_cot(&resolved, target, &key, completer).map_err(at(id, Stage::Cot))?;

        let prompt = assemble_prompt(&icl, &cot, target, self.config.prompt.token_budget)
            .map_err(at(id, Stage::Assemble))?;
        Ok(SamplePrompt {
            id: id.to_owned(),
            turns: vec![prompt.text],
            prediction: Some(prediction),
            key: Some(key.canonical()),
            guidance: Some(resolved.node.code.clone()),
            candidates: icl.examples.iter().map(|e| e.id.clone()).collect(),
            trimmed: prompt.trimmed,
            cot_source: Some(cot.source),
        })
    }

    /// Offline prompts for the whole test split, in id order.
    pub fn prompts(&self) -> Result<Vec<SamplePrompt>, PipelineError> {
        let mut records: Vec<&FunctionRecord> = self.split.test.records().iter().collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        records
            .into_iter()
            .map(|r| self.build_prompt(r, CotCompleter::Offline))
            .collect()
    }

    fn run_sample(
        &self,
        target: &FunctionRecord,
        client: &LlmClient,
    ) -> Result<(SamplePrompt, SampleResult), PipelineError> {
        let completer = match self.config.prompt.cot_mode {
            CotMode::Offline => CotCompleter::Offline,
            CotMode::Live => CotCompleter::Live(client),
        };
        let prompt = self.build_prompt(target, completer)?;
        let mut responses = client
            .converse(&prompt.turns)
            .map_err(at(&target.id, Stage::Detect))?;
        let last = responses.pop().expect("at least one turn");
        let mut conversation = Vec::new();
        for (turn, reply) in prompt.turns.iter().zip(&responses) {
            conversation.push(ChatMessage::user(turn.clone()));
            conversation.push(ChatMessage::assistant(reply.text.clone()));
        }
        conversation.push(ChatMessage::user(prompt.turns.last().expect("turn").clone()));
        let attempts = responses.iter().map(|r| r.attempts).sum::<u32>() + last.attempts;
        let prompt_tokens = responses.iter().map(|r| r.prompt_tokens).sum::<u64>() + last.prompt_tokens;
        let completion_tokens =
            responses.iter().map(|r| r.completion_tokens).sum::<u64>() + last.completion_tokens;
        let verdict = parse_verdict(last);
        let result = SampleResult {
            id: target.id.clone(),
            project: target.project.clone(),
            label: target.label,
            model_probability: prompt.prediction.as_ref().map(|p| p.probability),
            model_verdict: prompt.prediction.as_ref().map(|p| p.verdict),
            key: prompt.key.clone(),
            guidance: prompt.guidance.clone(),
            candidates: prompt.candidates.clone(),
            prompt_sha256: conversation_hash(&conversation),
            decision: verdict.decision,
            explanation: verdict.explanation,
            response: verdict.raw.text,
            attempts,
            prompt_tokens,
            completion_tokens,
        };
        Ok((prompt, result))
    }

    /// Runs every test sample, at most `llm.max_in_flight` at a time.
    /// Output is ordered by id; the first failing sample in id order is
    /// reported.
    pub fn run(&self, client: &LlmClient) -> Result<(Vec<SamplePrompt>, Vec<SampleResult>), PipelineError> {
        let mut records: Vec<&FunctionRecord> = self.split.test.records().iter().collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        let workers = client.config().max_in_flight.min(records.len()).max(1);
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let slots: Vec<Mutex<Option<SampleOutcome>>> =
            records.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(record) = records.get(i) else { break };
                    let outcome = self.run_sample(record, client);
                    if outcome.is_err() {
                        failed.store(true, Ordering::SeqCst);
                    }
                    *slots[i].lock().expect("slot poisoned") = Some(outcome);
                });
            }
        });
        let mut prompts = Vec::with_capacity(records.len());
        let mut results = Vec::with_capacity(records.len());
        for slot in slots {
            match slot.into_inner().expect("slot poisoned") {
                Some(Ok((p, r))) => {
                    prompts.push(p);
                    results.push(r);
                }
                Some(Err(e)) => return Err(e),
                None => {}
            }
        }
        Ok((prompts, results))
    }
}

fn first_missing(e: &crate::modelplug::ProviderError) -> Option<String> {
    use crate::modelplug::ProviderError as E;
    match e {
        E::MissingId(id) => Some(id.clone()),
        E::MissingIds(ids) => ids.first().cloned(),
        E::BatchFailed { ids, .. } => ids.first().cloned(),
        _ => None,
    }
}

/// Enough to reproduce a mock-mode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub prompt_mode: PromptMode,
    pub seed: u64,
    pub corpus_sha256: String,
    pub train_size: usize,
    pub test_size: usize,
    pub test_ids_sha256: String,
    pub provider_id: String,
    pub provider_threshold: f64,
    pub training: Option<TrainingManifest>,
    pub library_version: String,
    pub llm_model: String,
    pub llm_temperature: f64,
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub prompts: Vec<SamplePrompt>,
    pub results: Vec<SampleResult>,
    pub metrics: MetricsReport,
    /// The provider's own verdicts on the same split (augmented mode only).
    pub provider_metrics: Option<MetricsReport>,
    pub manifest: RunManifest,
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    let client = LlmClient::from_config(config.llm.clone()).map_err(setup("llm"))?;
    run_pipeline_with(config, &client)
}

/// As [`run_pipeline`] with a caller-supplied client.
pub fn run_pipeline_with(config: &RunConfig, client: &LlmClient) -> Result<RunOutcome, PipelineError> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let prepared = prepare(config)?;
    let (prompts, results) = prepared.run(client)?;
    let metrics = score_results(&results, config.unparseable);
    let provider_metrics = match config.prompt_mode {
        PromptMode::Augmented => Some(prepared.provider_metrics()?),
        _ => None,
    };
    let mut test_ids: Vec<&str> = prepared.split.test.ids();
    test_ids.sort_unstable();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        prompt_mode: config.prompt_mode,
        seed: config.seed,
        corpus_sha256: prepared.corpus_sha256.clone(),
        train_size: prepared.split.train.len(),
        test_size: prepared.split.test.len(),
        test_ids_sha256: sha256_hex(test_ids.join("\n").as_bytes()),
        provider_id: prepared.provider.model_id().to_owned(),
        provider_threshold: prepared.provider.threshold(),
        training: prepared.training.clone(),
        library_version: prepared.library.version().to_owned(),
        llm_model: config.llm.model.clone(),
        llm_temperature: config.llm.temperature,
        config: config.clone(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    Ok(RunOutcome {
        prompts,
        results,
        metrics,
        provider_metrics,
        manifest,
    })
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

/// Separator between turns in a prompt dump file.
pub const TURN_SEPARATOR: &str = "\n=== NEXT TURN ===\n";

/// Writes `<dir>/<id>.txt` per prompt.
pub fn write_prompt_dump(prompts: &[SamplePrompt], dir: &Path) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io {
        path: dir.display().to_string(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    for p in prompts {
        let path = dir.join(format!("{}.txt", file_stem_for(&p.id)));
        std::fs::write(&path, p.turns.join(TURN_SEPARATOR)).map_err(io)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    framework: &'a str,
    metrics: &'a MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    provider_metrics: Option<&'a MetricsReport>,
}

impl RunOutcome {
    /// `results.jsonl`, `prompts/`, `metrics.json` and `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |e: std::io::Error| PipelineError::Io { path, source: e }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let results = dir.join("results.jsonl");
        std::fs::write(&results, results_to_jsonl(&self.results)).map_err(io(&results))?;
        write_prompt_dump(&self.prompts, &dir.join("prompts"))?;
        let metrics = dir.join("metrics.json");
        let body = serde_json::to_string_pretty(&MetricsFile {
            framework: self.manifest.prompt_mode.as_str(),
            metrics: &self.metrics,
            provider_metrics: self.provider_metrics.as_ref(),
        })
        .expect("metrics serialize");
        std::fs::write(&metrics, body + "\n").map_err(io(&metrics))?;
        let manifest = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&self.manifest).expect("manifest serialize");
        std::fs::write(&manifest, body + "\n").map_err(io(&manifest))?;
        Ok(())
    }
}
