//! Static-analyzer report ingestion, category scoring and ranking.
//!
//! Analyzers run out of process; this module reads their saved reports,
//! resolves every finding to a node of the reasoning library, accumulates
//! severity per major category and ranks the categories.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::FunctionRecord;
use crate::taxonomy::{is_major, CotLibrary, UNKNOWN};

mod cppcheck;
mod flawfinder;

pub use cppcheck::parse_cppcheck_with;
pub use flawfinder::parse_flawfinder;

const DEFAULT_MAPPING: &str = include_str!("../../data/scan_mapping.toml");

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("report format: {0}")]
    Format(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("unknown cppcheck severity class \"{0}\"")]
    UnknownSeverity(String),
    #[error("mapping: {0}")]
    Mapping(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Jsonl {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("top-K requires K >= 1")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tool {
    Flawfinder,
    Cppcheck,
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tool::Flawfinder => "flawfinder",
            Tool::Cppcheck => "cppcheck",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticFinding {
    pub tool: Tool,
    pub rule_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwe: Option<u32>,
    /// 0..=5
    pub severity: u8,
    #[serde(default)]
    pub message: String,
    pub file: String,
    /// 1-based.
    pub line: u32,
}

/// Parses a Cppcheck report with the bundled severity table.
pub fn parse_cppcheck(report: &str) -> Result<Vec<StaticFinding>, ScanError> {
    parse_cppcheck_with(report, &ScanMapping::bundled().cppcheck_severity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolWeights {
    pub flawfinder: f64,
    pub cppcheck: f64,
}

impl ToolWeights {
    pub fn get(&self, tool: Tool) -> f64 {
        match tool {
            Tool::Flawfinder => self.flawfinder,
            Tool::Cppcheck => self.cppcheck,
        }
    }
}

/// Finding -> library node resolution table plus scoring weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanMapping {
    pub schema: u32,
    pub weights: ToolWeights,
    pub cppcheck_severity: BTreeMap<String, u8>,
    #[serde(default)]
    pub cwe: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: BTreeMap<String, String>,
}

impl ScanMapping {
    pub fn parse(text: &str) -> Result<Self, ScanError> {
        let mapping: Self = toml::from_str(text).map_err(|e| ScanError::Mapping(e.to_string()))?;
        if mapping.schema != 1 {
            return Err(ScanError::Mapping(format!(
                "unsupported mapping schema {}",
                mapping.schema
            )));
        }
        for key in mapping.cwe.keys() {
            key.parse::<u32>().map_err(|_| {
                ScanError::Mapping(format!("[cwe] key \"{key}\" is not a CWE number"))
            })?;
        }
        for (class, sev) in &mapping.cppcheck_severity {
            if *sev > 5 {
                return Err(ScanError::Mapping(format!(
                    "cppcheck severity {class} = {sev} is outside 0-5"
                )));
            }
        }
        if ![mapping.weights.flawfinder, mapping.weights.cppcheck]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            return Err(ScanError::Mapping("tool weights must be non-negative".into()));
        }
        Ok(mapping)
    }

    pub fn load(path: &Path) -> Result<Self, ScanError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScanError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn default_mapping() -> Self {
        Self::bundled().clone()
    }

    fn bundled() -> &'static Self {
        static BUNDLED: std::sync::OnceLock<ScanMapping> = std::sync::OnceLock::new();
        BUNDLED.get_or_init(|| Self::parse(DEFAULT_MAPPING).expect("bundled mapping is valid"))
    }

    /// Node code for a finding; `UNT` when nothing matches.
    pub fn resolve<'a>(&'a self, finding: &StaticFinding, library: &'a CotLibrary) -> &'a str {
        if let Some(cwe) = finding.cwe {
            if let Some(code) = self.cwe.get(&cwe.to_string()) {
                return code;
            }
            if let Some(node) = library.node_for_cwe(cwe) {
                return &node.code;
            }
        }
        self.rules
            .get(&format!("{}:{}", finding.tool, finding.rule_id))
            .map(String::as_str)
            .unwrap_or(UNKNOWN)
    }

    /// Every problem that keeps this table from resolving into `library`.
    pub fn check_against(&self, library: &CotLibrary) -> Vec<String> {
        let mut problems = Vec::new();
        for (cwe, code) in &self.cwe {
            if library.node(code).is_none() {
                problems.push(format!("[cwe] CWE-{cwe} -> \"{code}\" is not a library node"));
            }
        }
        for (rule, code) in &self.rules {
            if library.node(code).is_none() {
                problems.push(format!("[rules] {rule} -> \"{code}\" is not a library node"));
            }
            if !(rule.starts_with("flawfinder:") || rule.starts_with("cppcheck:")) {
                problems.push(format!("[rules] \"{rule}\" must be prefixed with a tool name"));
            }
        }
        problems
    }
}

/// Accumulated severity per category, per tool and combined.
///
/// Sums are kept as integer severity totals per (tool, node) and weighted at
/// read time, so the result does not depend on finding order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryScores {
    /// (tool, major code) -> severity total
    major_totals: BTreeMap<(Tool, String), u64>,
    /// (tool, major code, subcategory code) -> severity total
    sub_totals: BTreeMap<(Tool, String, String), u64>,
    weights: BTreeMap<Tool, f64>,
    /// Externally supplied combined scores (see [`CategoryScores::from_combined`]).
    preset: BTreeMap<String, f64>,
}

impl CategoryScores {
    pub fn tool_score(&self, tool: Tool, major: &str) -> f64 {
        let total = self
            .major_totals
            .get(&(tool, major.to_owned()))
            .copied()
            .unwrap_or(0);
        total as f64 * self.weights.get(&tool).copied().unwrap_or(1.0)
    }

    /// Per-tool scores for one tool.
    pub fn per_tool(&self, tool: Tool) -> BTreeMap<String, f64> {
        self.major_totals
            .keys()
            .filter(|(t, _)| *t == tool)
            .map(|(_, code)| (code.clone(), self.tool_score(tool, code)))
            .collect()
    }

    /// Combined score per major category (sum over tools).
    pub fn combined(&self) -> BTreeMap<String, f64> {
        let mut out = self.preset.clone();
        for (tool, code) in self.major_totals.keys() {
            *out.entry(code.clone()).or_default() += self.tool_score(*tool, code);
        }
        out
    }

    pub fn score(&self, major: &str) -> f64 {
        self.combined().get(major).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.combined().values().sum()
    }

    /// Highest-scoring subcategory under `major`, ties broken by code.
    pub fn dominant_subcategory(&self, major: &str) -> Option<String> {
        let mut subs: BTreeMap<&str, f64> = BTreeMap::new();
        for ((tool, m, sub), total) in &self.sub_totals {
            if m == major {
                *subs.entry(sub.as_str()).or_default() +=
                    *total as f64 * self.weights.get(tool).copied().unwrap_or(1.0);
            }
        }
        subs.into_iter()
            .filter(|(_, s)| *s > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(code, _)| code.to_owned())
    }

    /// Scores given directly as combined per-category values, for ranking
    /// externally computed scores. Negative values are clamped to zero.
    pub fn from_combined(scores: &[(&str, f64)]) -> Self {
        CategoryScores {
            preset: scores
                .iter()
                .map(|(code, s)| ((*code).to_owned(), s.max(0.0)))
                .collect(),
            ..Default::default()
        }
    }
}

/// Resolves each finding to one category and adds its severity there.
pub fn map_to_taxonomy(
    findings: &[StaticFinding],
    mapping: &ScanMapping,
    library: &CotLibrary,
) -> CategoryScores {
    let mut scores = CategoryScores::default();
    for tool in [Tool::Flawfinder, Tool::Cppcheck] {
        scores.weights.insert(tool, mapping.weights.get(tool));
    }
    for finding in findings {
        let code = mapping.resolve(finding, library);
        let (major, sub) = match library.node(code) {
            Some(node) => (node.major().to_owned(), node.parent.as_ref().map(|_| code)),
            None if is_major(code) => (code.to_owned(), None),
            None => (UNKNOWN.to_owned(), None),
        };
        *scores
            .major_totals
            .entry((finding.tool, major.clone()))
            .or_default() += u64::from(finding.severity);
        if let Some(sub) = sub {
            *scores
                .sub_totals
                .entry((finding.tool, major, sub.to_owned()))
                .or_default() += u64::from(finding.severity);
        }
    }
    scores
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCategory {
    pub code: String,
    pub score: f64,
    /// Dominant subcategory node under this major, if any finding mapped to one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus: Option<String>,
}

/// Descending by score, ties by code ascending, zero scores excluded.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedCategories(pub Vec<RankedCategory>);

impl RankedCategories {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, RankedCategory> {
        self.0.iter()
    }

    pub fn top(&self) -> Option<&RankedCategory> {
        self.0.first()
    }

    pub fn codes(&self) -> Vec<&str> {
        self.0.iter().map(|c| c.code.as_str()).collect()
    }

    /// e.g. `MEM (score 8), IDN (score 5)`.
    pub fn summary(&self) -> String {
        if self.0.is_empty() {
            return "no static analyzer findings".into();
        }
        self.0
            .iter()
            .map(|c| {
                let score = if c.score.fract() == 0.0 {
                    format!("{}", c.score as i64)
                } else {
                    format!("{:.2}", c.score)
                };
                match &c.focus {
                    Some(f) => format!("{} via {} (score {score})", c.code, f),
                    None => format!("{} (score {score})", c.code),
                }
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn top_k(scores: &CategoryScores, k: usize) -> Result<RankedCategories, ScanError> {
    if k == 0 {
        return Err(ScanError::ZeroK);
    }
    let mut ranked: Vec<RankedCategory> = scores
        .combined()
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(code, score)| RankedCategory {
            focus: scores.dominant_subcategory(&code),
            code,
            score,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.code.cmp(&b.code)));
    ranked.truncate(k);
    Ok(RankedCategories(ranked))
}

/// Canonical JSON-Lines encoding of findings.
pub fn findings_to_jsonl(findings: &[StaticFinding]) -> String {
    findings
        .iter()
        .map(|f| serde_json::to_string(f).expect("finding serializes") + "\n")
        .collect()
}

pub fn findings_from_jsonl(text: &str, origin: &Path) -> Result<Vec<StaticFinding>, ScanError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: StaticFinding = serde_json::from_str(l).map_err(|e| ScanError::Jsonl {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if f.severity > 5 || f.line == 0 {
                return Err(ScanError::Jsonl {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    message: "severity must be 0-5 and line >= 1".into(),
                });
            }
            Ok(f)
        })
        .collect()
}

pub fn load_findings(path: &Path) -> Result<Vec<StaticFinding>, ScanError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    findings_from_jsonl(&text, path)
}

/// Location of one function inside an analyzed file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpan {
    pub id: String,
    pub file: String,
    pub start_line: u32,
    pub end_line: u32,
}

pub fn load_function_map(path: &Path) -> Result<Vec<FunctionSpan>, ScanError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ScanError::Jsonl {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn file_key(file: &str) -> &str {
    let name = file.rsplit(['/', '\\']).next().unwrap_or(file);
    name.rsplit_once('.').map(|(stem, _)| stem).unwrap_or(name)
}

/// Groups findings by function id.
///
/// With a function map, a finding belongs to the span in the same file whose
/// line range contains it. Without one, each function is assumed to have been
/// analyzed as its own file named after its id (`<id>.c`, `dir/<id>.cpp`, ...).
pub fn assign_findings<'a>(
    findings: &'a [StaticFinding],
    records: &[FunctionRecord],
    function_map: Option<&[FunctionSpan]>,
) -> HashMap<String, Vec<&'a StaticFinding>> {
    let mut out: HashMap<String, Vec<&StaticFinding>> = HashMap::new();
    match function_map {
        Some(spans) => {
            for f in findings {
                if let Some(span) = spans.iter().find(|s| {
                    (s.file == f.file || file_key(&s.file) == file_key(&f.file) && !f.file.is_empty())
                        && (s.start_line..=s.end_line).contains(&f.line)
                }) {
                    out.entry(span.id.clone()).or_default().push(f);
                }
            }
        }
        None => {
            let ids: HashMap<&str, &str> = records
                .iter()
                .map(|r| (r.id.as_str(), r.id.as_str()))
                .collect();
            for f in findings {
                let key = if ids.contains_key(f.file.as_str()) {
                    f.file.as_str()
                } else {
                    file_key(&f.file)
                };
                if let Some(id) = ids.get(key) {
                    out.entry((*id).to_owned()).or_default().push(f);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::taxonomy::default_library;
    use proptest::prelude::*;

    fn finding(tool: Tool, rule: &str, cwe: Option<u32>, severity: u8) -> StaticFinding {
        StaticFinding {
            tool,
            rule_id: rule.into(),
            cwe,
            severity,
            message: String::new(),
            file: "f.c".into(),
            line: 1,
        }
    }

    #[test]
    fn strcpy_findings_sum_into_mem() {
        let lib = default_library();
        let findings = [
            finding(Tool::Flawfinder, "strcpy", Some(120), 4),
            finding(Tool::Flawfinder, "strcpy", Some(120), 4),
        ];
        let scores = map_to_taxonomy(&findings, &ScanMapping::default_mapping(), &lib);
        assert_eq!(scores.score("MEM"), 8.0);
        assert_eq!(scores.dominant_subcategory("MEM").as_deref(), Some("CWE-120"));
    }

    #[test]
    fn null_pointer_maps_to_idn() {
        let lib = default_library();
        let mapping = ScanMapping::default_mapping();
        for cwe in [Some(476), None] {
            let f = finding(Tool::Cppcheck, "nullPointer", cwe, 5);
            let scores = map_to_taxonomy(std::slice::from_ref(&f), &mapping, &lib);
            assert_eq!(scores.score("IDN"), 5.0);
            assert_eq!(scores.dominant_subcategory("IDN").as_deref(), Some("CWE-476"));
        }
    }

    #[test]
    fn unknown_rule_falls_back_to_unt() {
        let lib = default_library();
        let f = finding(Tool::Cppcheck, "someNewCheck", None, 3);
        let scores = map_to_taxonomy(&[f], &ScanMapping::default_mapping(), &lib);
        assert_eq!(scores.score("UNT"), 3.0);
        assert_eq!(scores.tool_score(Tool::Cppcheck, "UNT"), 3.0);
        assert_eq!(scores.tool_score(Tool::Flawfinder, "UNT"), 0.0);
    }

    #[test]
    fn weights_apply_per_tool() {
        let lib = default_library();
        let mut mapping = ScanMapping::default_mapping();
        mapping.weights.cppcheck = 0.5;
        let findings = [
            finding(Tool::Flawfinder, "strcpy", Some(120), 4),
            finding(Tool::Cppcheck, "bufferAccessOutOfBounds", None, 5),
        ];
        let scores = map_to_taxonomy(&findings, &mapping, &lib);
        assert_eq!(scores.per_tool(Tool::Cppcheck)["MEM"], 2.5);
        assert_eq!(scores.per_tool(Tool::Flawfinder)["MEM"], 4.0);
        assert_eq!(scores.score("MEM"), 6.5);
    }

    #[test]
    fn top_k_examples() {
        let scores = CategoryScores::from_combined(&[("MEM", 8.0), ("IDN", 5.0), ("NUM", 0.0)]);
        let ranked = top_k(&scores, 2).unwrap();
        assert_eq!(ranked.codes(), ["MEM", "IDN"]);
        assert_eq!(ranked.0[0].score, 8.0);
        assert_eq!(ranked.0[1].score, 5.0);

        let zeros = CategoryScores::from_combined(&[("MEM", 0.0), ("IDN", 0.0)]);
        assert!(top_k(&zeros, 3).unwrap().is_empty());

        let tie = CategoryScores::from_combined(&[("MEM", 5.0), ("IDN", 5.0)]);
        let ranked = top_k(&tie, 1).unwrap();
        assert_eq!(ranked.codes(), ["IDN"]);

        assert!(matches!(top_k(&scores, 0), Err(ScanError::ZeroK)));
    }

    #[test]
    fn summary_text() {
        let scores = CategoryScores::from_combined(&[("MEM", 8.0), ("IDN", 5.0)]);
        assert_eq!(top_k(&scores, 2).unwrap().summary(), "MEM (score 8), IDN (score 5)");
        assert_eq!(RankedCategories::default().summary(), "no static analyzer findings");
    }

    #[test]
    fn default_mapping_resolves_into_default_library() {
        let problems = ScanMapping::default_mapping().check_against(&default_library());
        assert!(problems.is_empty(), "{problems:?}");
    }

    #[test]
    fn assignment_by_file_and_by_span() {
        let records = vec![
            FunctionRecord::new("fn1", "p", "x", Label::Benign),
            FunctionRecord::new("fn2", "p", "y", Label::Benign),
        ];
        let mut a = finding(Tool::Flawfinder, "strcpy", Some(120), 4);
        a.file = "out/fn1.c".into();
        let mut b = finding(Tool::Flawfinder, "strcpy", Some(120), 4);
        b.file = "fn2".into();
        let mut c = finding(Tool::Flawfinder, "strcpy", Some(120), 4);
        c.file = "other.c".into();
        let findings = vec![a, b, c];
        let by_file = assign_findings(&findings, &records, None);
        assert_eq!(by_file["fn1"].len(), 1);
        assert_eq!(by_file["fn2"].len(), 1);
        assert_eq!(by_file.len(), 2);

        let spans = vec![
            FunctionSpan { id: "fn1".into(), file: "other.c".into(), start_line: 1, end_line: 10 },
            FunctionSpan { id: "fn2".into(), file: "other.c".into(), start_line: 11, end_line: 20 },
        ];
        let mut d = findings[2].clone();
        d.line = 15;
        let findings = vec![findings[2].clone(), d];
        let by_span = assign_findings(&findings, &records, Some(&spans));
        assert_eq!(by_span["fn1"].len(), 1);
        assert_eq!(by_span["fn2"][0].line, 15);
    }

    fn arb_finding() -> impl Strategy<Value = StaticFinding> {
        (
            prop_oneof![Just(Tool::Flawfinder), Just(Tool::Cppcheck)],
            prop_oneof![
                Just("strcpy"),
                Just("nullPointer"),
                Just("memcpy"),
                Just("zerodiv"),
                Just("mystery")
            ],
            prop::option::of(prop_oneof![Just(120u32), Just(476), Just(190), Just(9999), Just(20)]),
            0u8..=5,
            "[ -~]{0,20}",
            "[a-z]{1,8}\\.c",
            1u32..5000,
        )
            .prop_map(|(tool, rule, cwe, severity, message, file, line)| StaticFinding {
                tool,
                rule_id: rule.into(),
                cwe,
                severity,
                message,
                file,
                line,
            })
    }

    proptest! {
        #[test]
        fn scores_conserve_severity(findings in prop::collection::vec(arb_finding(), 0..40)) {
            let lib = default_library();
            let scores = map_to_taxonomy(&findings, &ScanMapping::default_mapping(), &lib);
            let expected: u64 = findings.iter().map(|f| u64::from(f.severity)).sum();
            prop_assert_eq!(scores.total(), expected as f64);
        }

        #[test]
        fn ranking_ignores_finding_order(
            findings in prop::collection::vec(arb_finding(), 0..40),
            seed in any::<u64>(),
            k in 1usize..7,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let lib = default_library();
            let mapping = ScanMapping::default_mapping();
            let mut shuffled = findings.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = top_k(&map_to_taxonomy(&findings, &mapping, &lib), k).unwrap();
            let b = top_k(&map_to_taxonomy(&shuffled, &mapping, &lib), k).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn canonical_jsonl_round_trip(findings in prop::collection::vec(arb_finding(), 0..20)) {
            let text = findings_to_jsonl(&findings);
            let back = findings_from_jsonl(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(back, findings);
        }
    }
}
