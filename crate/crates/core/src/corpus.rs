//! Function-level labeled datasets: JSON-Lines loading, class rebalancing and
//! stratified train/test splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub mod synthetic;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate record id \"{0}\"")]
    DuplicateId(String),
    #[error("record \"{0}\" has empty source")]
    EmptySource(String),
    #[error("corpus has no vulnerable records to balance against")]
    NoVulnerable,
    #[error("undersampling ratio must be positive and finite, got {0}")]
    InvalidRatio(f64),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("corpus of {0} records is too small to split with at least one record per side")]
    TooSmall(usize),
}

/// Binary ground truth. Serialized as `1` (vulnerable) / `0` (benign).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Benign,
    Vulnerable,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Vulnerable => 1,
        }
    }

    pub fn is_vulnerable(self) -> bool {
        self == Label::Vulnerable
    }

    pub fn from_bool(vulnerable: bool) -> Self {
        if vulnerable {
            Label::Vulnerable
        } else {
            Label::Benign
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Vulnerable => "vulnerable",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match u8::deserialize(deserializer)? {
            0 => Ok(Label::Benign),
            1 => Ok(Label::Vulnerable),
            other => Err(serde::de::Error::custom(format!(
                "label must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// One labeled function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: String,
    pub project: String,
    #[serde(rename = "code")]
    pub source: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit: Option<String>,
}

impl FunctionRecord {
    pub fn new(
        id: impl Into<String>,
        project: impl Into<String>,
        source: impl Into<String>,
        label: Label,
    ) -> Self {
        Self {
            id: id.into(),
            project: project.into(),
            source: source.into(),
            label,
            commit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub loaded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub vulnerable: usize,
    pub benign: usize,
}

/// An ordered, id-unique collection of records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    records: Vec<FunctionRecord>,
    provenance: Option<Provenance>,
}

impl Corpus {
    /// Validates uniqueness and non-empty sources.
    pub fn from_records(records: Vec<FunctionRecord>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(records.len());
        for record in &records {
            if record.source.is_empty() {
                return Err(CorpusError::EmptySource(record.id.clone()));
            }
            if !seen.insert(record.id.as_str()) {
                return Err(CorpusError::DuplicateId(record.id.clone()));
            }
        }
        Ok(Self {
            records,
            provenance: None,
        })
    }

    pub fn records(&self) -> &[FunctionRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FunctionRecord> {
        self.records
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FunctionRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn label_counts(&self) -> LabelCounts {
        let vulnerable = self
            .records
            .iter()
            .filter(|r| r.label.is_vulnerable())
            .count();
        LabelCounts {
            vulnerable,
            benign: self.records.len() - vulnerable,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    /// Canonical JSON-Lines form: one record per line in corpus order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(io)
    }

    fn subset(&self, keep: impl Fn(&FunctionRecord) -> bool) -> Corpus {
        Corpus {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Parses JSON-Lines corpus text. Blank lines are ignored; line numbers are 1-based.
pub fn parse_corpus(text: &str) -> Result<Corpus, CorpusError> {
    parse_lines(text.lines().map(|l| Ok(l.to_owned())))
}

fn parse_lines(
    lines: impl Iterator<Item = std::io::Result<String>>,
) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FunctionRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.source.is_empty() {
            return Err(CorpusError::Malformed {
                line: line_no,
                message: format!("record \"{}\" has empty code", record.id),
            });
        }
        records.push(record);
    }
    Corpus::from_records(records)
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut corpus = parse_lines(BufReader::new(file).lines())?;
    corpus.provenance = Some(Provenance {
        path: path.to_path_buf(),
        loaded_at: Utc::now(),
    });
    Ok(corpus)
}

/// Randomly drops benign records until at most `round(ratio * vulnerable)`
/// remain. Vulnerable records and corpus order are preserved.
pub fn undersample(corpus: &Corpus, ratio: f64, seed: u64) -> Result<Corpus, CorpusError> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    let counts = corpus.label_counts();
    if counts.vulnerable == 0 {
        return Err(CorpusError::NoVulnerable);
    }
    let target = (ratio * counts.vulnerable as f64).round() as usize;
    if counts.benign <= target {
        return Ok(corpus.clone());
    }
    let mut benign: Vec<&str> = corpus
        .records
        .iter()
        .filter(|r| !r.label.is_vulnerable())
        .map(|r| r.id.as_str())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    benign.shuffle(&mut rng);
    let kept: HashSet<&str> = benign.into_iter().take(target).collect();
    Ok(corpus.subset(|r| r.label.is_vulnerable() || kept.contains(r.id.as_str())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Corpus,
    pub test: Corpus,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Stratified split: each label group contributes `round(fraction * group)`
/// records to train. Relative corpus order is kept on both sides.
pub fn split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<DatasetSplit, CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }
    if corpus.len() < 2 {
        return Err(CorpusError::TooSmall(corpus.len()));
    }
    let mut groups: BTreeMap<Label, Vec<&str>> = BTreeMap::new();
    for r in &corpus.records {
        groups.entry(r.label).or_default().push(r.id.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = HashSet::new();
    for ids in groups.values_mut() {
        ids.shuffle(&mut rng);
        let take = (train_fraction * ids.len() as f64).round() as usize;
        train_ids.extend(ids.iter().take(take).copied());
    }
    if train_ids.is_empty() || train_ids.len() == corpus.len() {
        return Err(CorpusError::TooSmall(corpus.len()));
    }
    let train = corpus.subset(|r| train_ids.contains(r.id.as_str()));
    let test = corpus.subset(|r| !train_ids.contains(r.id.as_str()));
    Ok(DatasetSplit {
        train,
        test,
        seed,
        train_fraction,
    })
}
