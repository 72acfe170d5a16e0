//! Hierarchical library of detection reasoning guidance.
//!
//! Six major categories sit at the root; subcategory nodes are keyed by CWE
//! ids and hang off exactly one major. Each node carries five ordered step
//! templates. Lookups go through a [`QueryKey`] built from ranked
//! static-analysis categories and the detection model's verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

mod key;

pub use key::{build_query_key, retrieve_guidance, QueryKey, ResolvedGuidance};

pub const MAJOR_CODES: [&str; 6] = ["SFE", "LOG", "MEM", "NUM", "IDN", "UNT"];
pub const UNKNOWN: &str = "UNT";
pub const SCHEMA_VERSION: u32 = 1;

/// Placeholders a template may reference.
pub const PLACEHOLDERS: [&str; 5] = ["code", "category", "findings", "verdict", "probability"];

const DEFAULT_LIBRARY: &str = include_str!("../../data/cot_library.toml");

pub fn is_major(code: &str) -> bool {
    MAJOR_CODES.contains(&code)
}

#[derive(Debug, thiserror::Error)]
pub enum TaxonomyError {
    #[error("failed to read library {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("library schema error: {0}")]
    Parse(String),
    #[error("unsupported library schema {0} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema(u32),
    #[error("library schema error: major category {0} is missing")]
    MissingMajor(String),
    #[error("major category {0} must not have a parent")]
    MajorWithParent(String),
    #[error("orphan subcategory \"{code}\": parent {parent:?} is not a major category")]
    Orphan { code: String, parent: Option<String> },
    #[error("duplicate node code \"{0}\"")]
    DuplicateCode(String),
    #[error("CWE-{cwe} is claimed by both \"{first}\" and \"{second}\"")]
    DuplicateCwe {
        cwe: u32,
        first: String,
        second: String,
    },
    #[error("major category {code} is missing guidance step \"{step}\"")]
    IncompleteGuidance { code: String, step: &'static str },
    #[error("node \"{code}\" uses unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { code: String, placeholder: String },
}

/// The five reasoning steps in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Semantics,
    Logic,
    InternalRisks,
    ExternalRisks,
    Chain,
}

impl StepKind {
    pub const ALL: [StepKind; 5] = [
        StepKind::Semantics,
        StepKind::Logic,
        StepKind::InternalRisks,
        StepKind::ExternalRisks,
        StepKind::Chain,
    ];

    pub fn key(self) -> &'static str {
        match self {
            StepKind::Semantics => "semantics",
            StepKind::Logic => "logic",
            StepKind::InternalRisks => "internal_risks",
            StepKind::ExternalRisks => "external_risks",
            StepKind::Chain => "chain",
        }
    }

    /// Heading rendered in prompts and required in completed chains.
    pub fn heading(self) -> &'static str {
        match self {
            StepKind::Semantics => "Step 1 - Semantics",
            StepKind::Logic => "Step 2 - Logic",
            StepKind::InternalRisks => "Step 3 - Internal risks",
            StepKind::ExternalRisks => "Step 4 - External risks",
            StepKind::Chain => "Step 5 - Generating the chain",
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.heading())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotGuidance {
    pub semantics: String,
    pub logic: String,
    pub internal_risks: String,
    pub external_risks: String,
    pub chain: String,
}

impl CotGuidance {
    pub fn step(&self, kind: StepKind) -> &str {
        match kind {
            StepKind::Semantics => &self.semantics,
            StepKind::Logic => &self.logic,
            StepKind::InternalRisks => &self.internal_risks,
            StepKind::ExternalRisks => &self.external_risks,
            StepKind::Chain => &self.chain,
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = (StepKind, &str)> {
        StepKind::ALL.into_iter().map(move |k| (k, self.step(k)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaxonomyNode {
    pub code: String,
    pub name: String,
    pub description: Option<String>,
    pub parent: Option<String>,
    pub cwe_ids: Vec<u32>,
    pub guidance: CotGuidance,
}

impl TaxonomyNode {
    /// The major category this node belongs to.
    pub fn major(&self) -> &str {
        self.parent.as_deref().unwrap_or(&self.code)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLibrary {
    schema: u32,
    version: String,
    #[serde(default, rename = "node")]
    nodes: Vec<RawNode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    code: String,
    name: String,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    parent: Option<String>,
    #[serde(default)]
    cwe_ids: Vec<u32>,
    #[serde(default)]
    guidance: RawGuidance,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuidance {
    semantics: Option<String>,
    logic: Option<String>,
    internal_risks: Option<String>,
    external_risks: Option<String>,
    chain: Option<String>,
}

impl RawGuidance {
    fn get(&self, kind: StepKind) -> Option<&String> {
        match kind {
            StepKind::Semantics => self.semantics.as_ref(),
            StepKind::Logic => self.logic.as_ref(),
            StepKind::InternalRisks => self.internal_risks.as_ref(),
            StepKind::ExternalRisks => self.external_risks.as_ref(),
            StepKind::Chain => self.chain.as_ref(),
        }
    }
}

/// `{name}` tokens in a template, where name is `[a-z_]+`.
fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if close > 0
                    && after[..close]
                        .bytes()
                        .all(|b| b.is_ascii_lowercase() || b == b'_') =>
            {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

/// Values substituted into guidance templates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlaceholderValues<'a> {
    pub code: &'a str,
    pub category: &'a str,
    pub findings: &'a str,
    pub verdict: &'a str,
    pub probability: f64,
}

/// Substitutes every known placeholder. Unknown ones are rejected at load
/// time, so none survive here.
pub fn fill_template(template: &str, values: &PlaceholderValues<'_>) -> String {
    let probability = format!("{:.2}", values.probability);
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replacement = after.find('}').and_then(|close| {
            let value = match &after[..close] {
                "code" => values.code,
                "category" => values.category,
                "findings" => values.findings,
                "verdict" => values.verdict,
                "probability" => probability.as_str(),
                _ => return None,
            };
            Some((value, close))
        });
        match replacement {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Loaded, validated library with guidance inheritance resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CotLibrary {
    version: String,
    nodes: BTreeMap<String, TaxonomyNode>,
    cwe_index: BTreeMap<u32, String>,
}

impl CotLibrary {
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn node(&self, code: &str) -> Option<&TaxonomyNode> {
        self.nodes.get(code)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values()
    }

    pub fn majors(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values().filter(|n| n.parent.is_none())
    }

    pub fn subcategories(&self) -> impl Iterator<Item = &TaxonomyNode> {
        self.nodes.values().filter(|n| n.parent.is_some())
    }

    pub fn node_for_cwe(&self, cwe: u32) -> Option<&TaxonomyNode> {
        self.cwe_index.get(&cwe).and_then(|code| self.nodes.get(code))
    }

    pub fn unknown(&self) -> &TaxonomyNode {
        &self.nodes[UNKNOWN]
    }

    /// Copy without the given subcategory codes. Majors cannot be removed.
    pub fn without(&self, codes: &[&str]) -> CotLibrary {
        let mut pruned = self.clone();
        for code in codes {
            if !is_major(code) {
                pruned.nodes.remove(*code);
            }
        }
        pruned.cwe_index.retain(|_, code| pruned.nodes.contains_key(code));
        pruned
    }
}

pub fn parse_library(text: &str) -> Result<CotLibrary, TaxonomyError> {
    let raw: RawLibrary = toml::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
    if raw.schema != SCHEMA_VERSION {
        return Err(TaxonomyError::UnsupportedSchema(raw.schema));
    }

    let mut seen = BTreeSet::new();
    for node in &raw.nodes {
        if !seen.insert(node.code.as_str()) {
            return Err(TaxonomyError::DuplicateCode(node.code.clone()));
        }
        for step in StepKind::ALL {
            if let Some(template) = node.guidance.get(step) {
                if let Some(bad) = placeholders(template)
                    .into_iter()
                    .find(|p| !PLACEHOLDERS.contains(p))
                {
                    return Err(TaxonomyError::UnknownPlaceholder {
                        code: node.code.clone(),
                        placeholder: bad.to_owned(),
                    });
                }
            }
        }
    }
    for major in MAJOR_CODES {
        if !seen.contains(major) {
            return Err(TaxonomyError::MissingMajor(major.to_owned()));
        }
    }

    let majors: BTreeMap<&str, &RawNode> = raw
        .nodes
        .iter()
        .filter(|n| is_major(&n.code))
        .map(|n| (n.code.as_str(), n))
        .collect();
    let mut major_guidance = BTreeMap::new();
    for (code, node) in &majors {
        if node.parent.is_some() {
            return Err(TaxonomyError::MajorWithParent((*code).to_owned()));
        }
        let mut steps = Vec::with_capacity(5);
        for step in StepKind::ALL {
            let template = node.guidance.get(step).ok_or(TaxonomyError::IncompleteGuidance {
                code: (*code).to_owned(),
                step: step.key(),
            })?;
            steps.push(template.clone());
        }
        let [semantics, logic, internal_risks, external_risks, chain]: [String; 5] =
            steps.try_into().expect("five steps");
        major_guidance.insert(
            *code,
            CotGuidance {
                semantics,
                logic,
                internal_risks,
                external_risks,
                chain,
            },
        );
    }

    let mut nodes = BTreeMap::new();
    let mut cwe_index: BTreeMap<u32, String> = BTreeMap::new();
    for node in &raw.nodes {
        let guidance = if is_major(&node.code) {
            major_guidance[node.code.as_str()].clone()
        } else {
            let parent = match node.parent.as_deref() {
                Some(p) if is_major(p) => p,
                other => {
                    return Err(TaxonomyError::Orphan {
                        code: node.code.clone(),
                        parent: other.map(str::to_owned),
                    })
                }
            };
            let inherited = &major_guidance[parent];
            let pick = |kind| {
                node.guidance
                    .get(kind)
                    .cloned()
                    .unwrap_or_else(|| inherited.step(kind).to_owned())
            };
            CotGuidance {
                semantics: pick(StepKind::Semantics),
                logic: pick(StepKind::Logic),
                internal_risks: pick(StepKind::InternalRisks),
                external_risks: pick(StepKind::ExternalRisks),
                chain: pick(StepKind::Chain),
            }
        };
        for &cwe in &node.cwe_ids {
            if let Some(first) = cwe_index.insert(cwe, node.code.clone()) {
                return Err(TaxonomyError::DuplicateCwe {
                    cwe,
                    first,
                    second: node.code.clone(),
                });
            }
        }
        nodes.insert(
            node.code.clone(),
            TaxonomyNode {
                code: node.code.clone(),
                name: node.name.clone(),
                description: node.description.clone(),
                parent: node.parent.clone(),
                cwe_ids: node.cwe_ids.clone(),
                guidance,
            },
        );
    }

    Ok(CotLibrary {
        version: raw.version,
        nodes,
        cwe_index,
    })
}

pub fn load_library(path: &Path) -> Result<CotLibrary, TaxonomyError> {
    let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_library(&text)
}

/// The library shipped with the crate.
pub fn default_library() -> CotLibrary {
    parse_library(DEFAULT_LIBRARY).expect("bundled library is valid")
}

pub fn default_library_text() -> &'static str {
    DEFAULT_LIBRARY
}
