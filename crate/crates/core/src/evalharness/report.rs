//! Comparison tables over completed runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PromptMode;
use super::metrics::MetricsReport;
use super::pipeline::{results_from_jsonl, score_results, SampleResult};
use super::PipelineError;
use crate::llmclient::UnparseablePolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(format!("unknown report format \"{s}\"")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub framework: String,
    pub project: String,
    pub metrics: MetricsReport,
}

/// One row per project, projects in name order.
pub fn report_rows(
    framework: &str,
    results: &[SampleResult],
    policy: UnparseablePolicy,
) -> Vec<ReportRow> {
    let mut by_project: BTreeMap<&str, Vec<SampleResult>> = BTreeMap::new();
    for r in results {
        by_project.entry(&r.project).or_default().push(r.clone());
    }
    by_project
        .into_iter()
        .map(|(project, rs)| ReportRow {
            framework: framework.to_owned(),
            project: project.to_owned(),
            metrics: score_results(&rs, policy),
        })
        .collect()
}

#[derive(Deserialize)]
struct ManifestHead {
    prompt_mode: PromptMode,
}

/// Re-scores a run directory from its `results.jsonl` under `policy`.
pub fn load_run(dir: &Path, policy: UnparseablePolicy) -> Result<Vec<ReportRow>, PipelineError> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read_to_string(&path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    };
    let head: ManifestHead = serde_json::from_str(&read("manifest.json")?)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", dir.join("manifest.json").display())))?;
    let results = results_from_jsonl(&read("results.jsonl")?)?;
    Ok(report_rows(head.prompt_mode.as_str(), &results, policy))
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn cells(m: &MetricsReport) -> [String; 6] {
    [
        pct(m.precision),
        pct(m.recall),
        pct(m.f1),
        pct(m.fpr),
        pct(m.mcc),
        m.unparseable.to_string(),
    ]
}

pub const CSV_HEADER: [&str; 8] = [
    "framework",
    "project",
    "precision_pct",
    "recall_pct",
    "f1_pct",
    "fpr_pct",
    "mcc_pct",
    "unparseable_count",
];

/// Table with precision, recall, F1, FPR and MCC as percentages to one
/// decimal, followed (markdown only) by any zero-denominator notes.
pub fn emit_report(rows: &[ReportRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER).expect("write to Vec");
            for row in rows {
                let mut record = vec![row.framework.clone(), row.project.clone()];
                record.extend(cells(&row.metrics));
                w.write_record(&record).expect("write to Vec");
            }
            String::from_utf8(w.into_inner().expect("flush Vec")).expect("utf-8 input")
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| Framework | Project | Precision (%) | Recall (%) | F1 (%) | FPR (%) | MCC (%) | Unparseable |\n\
                 |---|---|---:|---:|---:|---:|---:|---:|\n",
            );
            let mut notes = Vec::new();
            for row in rows {
                out.push_str(&format!(
                    "| {} | {} | {} |\n",
                    row.framework,
                    row.project,
                    cells(&row.metrics).join(" | ")
                ));
                for note in &row.metrics.notes {
                    notes.push(format!("- {} / {}: {note}", row.framework, row.project));
                }
            }
            if !notes.is_empty() {
                out.push_str("\nNotes:\n");
                out.push_str(&notes.join("\n"));
                out.push('\n');
            }
            out
        }
    }
}
