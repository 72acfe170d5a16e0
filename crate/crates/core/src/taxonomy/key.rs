use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CotGuidance, CotLibrary, TaxonomyNode};
use crate::corpus::Label;
use crate::modelplug::ModelPrediction;
use crate::staticscan::RankedCategories;

/// Retrieval key: ranked analyzer categories plus the model's verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryKey {
    pub categories: RankedCategories,
    /// Subcategory node behind the top-ranked category, if known.
    pub focus: Option<String>,
    pub model_verdict: Label,
    pub model_probability: f64,
}

impl QueryKey {
    /// Stable text form, e.g. `{categories:[MEM,IDN], dl:vulnerable}`. A known
    /// focus node is added as `focus:<code>` before the verdict.
    pub fn canonical(&self) -> String {
        let codes = self.categories.codes().join(",");
        match &self.focus {
            Some(focus) => format!(
                "{{categories:[{codes}], focus:{focus}, dl:{}}}",
                self.model_verdict
            ),
            None => format!("{{categories:[{codes}], dl:{}}}", self.model_verdict),
        }
    }

    /// Parses the `dl:` verdict out of a canonical key embedded in `text`.
    pub fn verdict_in(text: &str) -> Option<Label> {
        let start = text.find("{categories:[")?;
        let rest = &text[start..];
        let end = rest.find('}')?;
        let key = &rest[..end];
        let dl = key.rfind("dl:")?;
        match &key[dl + 3..] {
            "vulnerable" => Some(Label::Vulnerable),
            "benign" => Some(Label::Benign),
            _ => None,
        }
    }
}

impl fmt::Display for QueryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

pub fn build_query_key(ranked: &RankedCategories, prediction: &ModelPrediction) -> QueryKey {
    QueryKey {
        focus: ranked.top().and_then(|c| c.focus.clone()),
        categories: ranked.clone(),
        model_verdict: prediction.verdict,
        model_probability: prediction.probability,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedGuidance<'a> {
    pub node: &'a TaxonomyNode,
    /// Major category code of `node`.
    pub category: &'a str,
    pub guidance: &'a CotGuidance,
}

/// Guidance for the top-ranked category: its focus subcategory when the
/// library has it, otherwise the major node, otherwise UNT. Never fails.
pub fn retrieve_guidance<'a>(library: &'a CotLibrary, key: &QueryKey) -> ResolvedGuidance<'a> {
    let node = key
        .categories
        .top()
        .and_then(|top| {
            key.focus
                .as_deref()
                .and_then(|f| library.node(f))
                .filter(|n| n.major() == top.code)
                .or_else(|| library.node(&top.code))
        })
        .unwrap_or_else(|| library.unknown());
    ResolvedGuidance {
        node,
        category: node.major(),
        guidance: &node.guidance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::staticscan::{top_k, CategoryScores, RankedCategory};
    use crate::taxonomy::default_library;

    fn prediction(p: f64) -> ModelPrediction {
        ModelPrediction::new(p, 0.5, "m")
    }

    #[test]
    fn canonical_form_follows_ranking() {
        let ranked = top_k(
            &CategoryScores::from_combined(&[("IDN", 5.0), ("MEM", 8.0)]),
            2,
        )
        .unwrap();
        let key = build_query_key(&ranked, &prediction(0.9));
        assert_eq!(key.canonical(), "{categories:[MEM,IDN], dl:vulnerable}");
        assert_eq!(key.canonical(), build_query_key(&ranked, &prediction(0.9)).canonical());
        assert_eq!(QueryKey::verdict_in(&key.canonical()), Some(Label::Vulnerable));
    }

    #[test]
    fn empty_ranking_benign() {
        let key = build_query_key(&RankedCategories::default(), &prediction(0.1));
        assert_eq!(key.canonical(), "{categories:[], dl:benign}");
        let lib = default_library();
        let resolved = retrieve_guidance(&lib, &key);
        assert_eq!(resolved.node.code, "UNT");
        assert_eq!(QueryKey::verdict_in(&format!("x {key} y")), Some(Label::Benign));
    }

    fn idn_key(focus: Option<&str>) -> QueryKey {
        let ranked = RankedCategories(vec![RankedCategory {
            code: "IDN".into(),
            score: 5.0,
            focus: focus.map(str::to_owned),
        }]);
        build_query_key(&ranked, &prediction(0.8))
    }

    #[test]
    fn null_pointer_guidance() {
        let lib = default_library();
        let key = idn_key(Some("CWE-476"));
        assert_eq!(
            key.canonical(),
            "{categories:[IDN], focus:CWE-476, dl:vulnerable}"
        );
        let resolved = retrieve_guidance(&lib, &key);
        assert_eq!(resolved.node.code, "CWE-476");
        assert_eq!(resolved.category, "IDN");
        assert!(resolved.guidance.internal_risks.contains("NULL"));
    }

    #[test]
    fn pruned_library_falls_back_to_parent() {
        let lib = default_library().without(&["CWE-476"]);
        let resolved = retrieve_guidance(&lib, &idn_key(Some("CWE-476")));
        assert_eq!(resolved.node.code, "IDN");
        let resolved = retrieve_guidance(&lib, &idn_key(Some("CWE-does-not-exist")));
        assert_eq!(resolved.node.code, "IDN");
    }

    #[test]
    fn lookup_is_pure() {
        let lib = default_library();
        let before = lib.clone();
        let key = idn_key(Some("CWE-476"));
        let a = retrieve_guidance(&lib, &key).node.code.clone();
        let b = retrieve_guidance(&lib, &key).node.code.clone();
        assert_eq!(a, b);
        assert_eq!(lib, before);
    }
}
