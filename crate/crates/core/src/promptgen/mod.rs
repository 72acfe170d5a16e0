//! Prompt assembly: reference-case blocks, reasoning-chain blocks, the final
//! augmented prompt, and the baseline prompt families.

use serde::{Deserialize, Serialize};

use crate::corpus::FunctionRecord;
use crate::llmclient::{LlmClient, LlmError};
use crate::modelplug::ModelPrediction;
use crate::taxonomy::{fill_template, PlaceholderValues, QueryKey, ResolvedGuidance, StepKind};

mod baseline;
mod dataflow;

pub use baseline::{
    render_baseline, BaselineKind, BaselinePrompt, AUXILIARY_TEMPLATE, COT_STEP1_TEMPLATE,
    COT_STEP2_TEMPLATE, ROLE_TEMPLATE,
};
pub use dataflow::summarize_dataflow;

pub const ICL_MARKER: &str = "=== REFERENCE CASES ===";
pub const COT_MARKER: &str = "=== REASONING CHAIN ===";
pub const TARGET_MARKER: &str = "=== TARGET CODE ===";
pub const INSTRUCTION_MARKER: &str = "=== ANSWER FORMAT ===";

/// Question asked for every reference case.
pub const ICL_QUESTION: &str = "Is the following program buggy?";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("{candidates} candidates but {predictions} predictions")]
    Misaligned { candidates: usize, predictions: usize },
    #[error("reference case count must be >= 1")]
    ZeroCandidates,
    #[error("probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("blocks were built for {icl} and {cot}, target is {target}")]
    TargetMismatch {
        icl: String,
        cot: String,
        target: String,
    },
    #[error("auxiliary baseline needs a data-flow description")]
    MissingAux,
    #[error("completion lacks step heading \"{0}\"")]
    CompletionFormat(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Rough token count: one token per four characters.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExample {
    pub id: String,
    pub code: String,
    pub probability: f64,
    pub similarity: f64,
}

/// Reference cases for one target, most similar first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclBlock {
    pub target_id: String,
    pub examples: Vec<IclExample>,
}

/// Keeps the `m` most similar candidates (ties by id) as question/answer
/// pairs. `predictions[i]` belongs to `candidates[i]`.
pub fn assemble_icl(
    target_id: &str,
    candidates: &[(&FunctionRecord, f64)],
    predictions: &[ModelPrediction],
    m: usize,
) -> Result<IclBlock, PromptError> {
    if m == 0 {
        return Err(PromptError::ZeroCandidates);
    }
    if candidates.len() != predictions.len() {
        return Err(PromptError::Misaligned {
            candidates: candidates.len(),
            predictions: predictions.len(),
        });
    }
    let mut examples = Vec::with_capacity(candidates.len());
    for ((record, similarity), pred) in candidates.iter().zip(predictions) {
        if !(0.0..=1.0).contains(&pred.probability) {
            return Err(PromptError::Probability(pred.probability));
        }
        examples.push(IclExample {
            id: record.id.clone(),
            code: record.source.clone(),
            probability: pred.probability,
            similarity: *similarity,
        });
    }
    examples.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.id.cmp(&b.id))
    });
    examples.truncate(m);
    Ok(IclBlock {
        target_id: target_id.to_owned(),
        examples,
    })
}

impl IclBlock {
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(ICL_MARKER);
        out.push('\n');
        if self.examples.is_empty() {
            out.push_str("No similar reference functions were found for this target.\n");
            return out;
        }
        out.push_str(
            "Similar functions with the detection model's probability that each is vulnerable.\n",
        );
        for (i, ex) in self.examples.iter().enumerate() {
            out.push_str(&format!(
                "\nExample {} (similarity {:.2})\nQ: {ICL_QUESTION}\n{}\nA: Detection probability: {:.2}\n",
                i + 1,
                ex.similarity,
                ex.code.trim_end(),
                ex.probability
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CotSource {
    /// Placeholder substitution only.
    Template,
    /// Expanded by the LLM.
    Llm,
    /// LLM expansion failed twice; template used instead.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotBlock {
    pub target_id: String,
    /// Library node the guidance came from.
    pub node: String,
    pub key: String,
    pub findings: String,
    pub model_line: String,
    /// One entry per step, in step order.
    pub steps: Vec<(StepKind, String)>,
    pub source: CotSource,
}

/// Offline substitution, or one LLM expansion validated against the step
/// headings.
#[derive(Debug, Clone, Copy)]
pub enum CotCompleter<'a> {
    Offline,
    Live(&'a LlmClient),
}

fn offline_steps(resolved: &ResolvedGuidance<'_>, values: &PlaceholderValues<'_>) -> Vec<(StepKind, String)> {
    resolved
        .guidance
        .steps()
        .map(|(kind, template)| (kind, fill_template(template, values)))
        .collect()
}

fn completion_request(steps: &[(StepKind, String)], code: &str) -> String {
    let mut out = String::from(
        "Complete the vulnerability analysis below for the given code. Keep the five step \
         headings exactly as written and replace the guidance under each heading with your \
         concrete analysis of this code.\n",
    );
    for (kind, text) in steps {
        out.push_str(&format!("\n{}\n{}\n", kind.heading(), text));
    }
    out.push_str(&format!("\nCode:\n{}\n", code.trim_end()));
    out
}

fn heading_position(text: &str, heading: &str, from: usize) -> Option<(usize, usize)> {
    let mut offset = from;
    for line in text[from..].split_inclusive('\n') {
        let stripped = line.trim().trim_matches(|c: char| c == '#' || c == '*' || c == ':' || c == ' ');
        if stripped.eq_ignore_ascii_case(heading) {
            return Some((offset, offset + line.len()));
        }
        offset += line.len();
    }
    None
}

/// Splits an LLM completion on the five headings, which must appear in order.
pub fn split_steps(text: &str) -> Result<Vec<(StepKind, String)>, PromptError> {
    let mut bounds = Vec::with_capacity(5);
    let mut from = 0;
    for kind in StepKind::ALL {
        let (start, body) = heading_position(text, kind.heading(), from)
            .ok_or_else(|| PromptError::CompletionFormat(kind.heading().into()))?;
        bounds.push((kind, start, body));
        from = body;
    }
    Ok(bounds
        .iter()
        .enumerate()
        .map(|(i, &(kind, _, body))| {
            let end = bounds.get(i + 1).map(|b| b.1).unwrap_or(text.len());
            (kind, text[body..end].trim().to_owned())
        })
        .collect())
}

pub fn complete_cot(
    resolved: &ResolvedGuidance<'_>,
    target: &FunctionRecord,
    key: &QueryKey,
    completer: CotCompleter<'_>,
) -> Result<CotBlock, PromptError> {
    let label = format!("{} ({})", resolved.node.name, resolved.node.code);
    let findings = key.categories.summary();
    let values = PlaceholderValues {
        code: &target.source,
        category: &label,
        findings: &findings,
        verdict: key.model_verdict.as_str(),
        probability: key.model_probability,
    };
    let template = offline_steps(resolved, &values);
    let (steps, source) = match completer {
        CotCompleter::Offline => (template, CotSource::Template),
        CotCompleter::Live(client) => {
            let request = completion_request(&template, &target.source);
            let mut expanded = None;
            for _ in 0..2 {
                let reply = client.complete(&[
                    crate::llmclient::ChatMessage::system(crate::llmclient::DETECTION_PERSONA),
                    crate::llmclient::ChatMessage::user(request.clone()),
                ])?;
                if let Ok(steps) = split_steps(&reply.text) {
                    expanded = Some(steps);
                    break;
                }
            }
            match expanded {
                Some(steps) => (steps, CotSource::Llm),
                None => (template, CotSource::Fallback),
            }
        }
    };
    Ok(CotBlock {
        target_id: target.id.clone(),
        node: resolved.node.code.clone(),
        key: key.canonical(),
        model_line: format!(
            "{} (probability {:.2})",
            key.model_verdict, key.model_probability
        ),
        findings,
        steps,
        source,
    })
}

impl CotBlock {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{COT_MARKER}\nQuery key: {}\nStatic analysis: {}\nDetection model: {}\nReason through the following steps before answering.\n",
            self.key, self.findings, self.model_line
        );
        for (kind, text) in &self.steps {
            out.push_str(&format!("\n{}\n{}\n", kind.heading(), text));
        }
        out
    }
}

pub const ANSWER_INSTRUCTION: &str = "Is the target code buggy? Please answer Yes or No. \
Start your reply with \"Yes\" or \"No\" as the first word, then explain your reasoning in a few sentences.\n\
Format:\nYes|No. <explanation>\n";

/// Final prompt for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    pub target_id: String,
    pub text: String,
    pub estimated_tokens: usize,
    pub icl_examples: usize,
    /// Reference cases dropped to respect the token budget.
    pub trimmed: Vec<String>,
    pub over_budget: bool,
}

fn render_prompt(icl: &IclBlock, cot: &CotBlock, target: &FunctionRecord) -> String {
    format!(
        "{}\n{}\n{TARGET_MARKER}\n{}\n\n{INSTRUCTION_MARKER}\n{ANSWER_INSTRUCTION}",
        icl.render(),
        cot.render(),
        target.source.trim_end()
    )
}

/// Joins the sections in fixed order. With a budget, drops the longest
/// reference cases until the estimate fits or none remain.
pub fn assemble_prompt(
    icl: &IclBlock,
    cot: &CotBlock,
    target: &FunctionRecord,
    token_budget: Option<usize>,
) -> Result<AugmentedPrompt, PromptError> {
    if icl.target_id != target.id || cot.target_id != target.id {
        return Err(PromptError::TargetMismatch {
            icl: icl.target_id.clone(),
            cot: cot.target_id.clone(),
            target: target.id.clone(),
        });
    }
    let mut icl = icl.clone();
    let mut trimmed = Vec::new();
    let mut text = render_prompt(&icl, cot, target);
    if let Some(budget) = token_budget {
        while estimate_tokens(&text) > budget && !icl.examples.is_empty() {
            let longest = icl
                .examples
                .iter()
                .enumerate()
                .max_by_key(|(i, ex)| (ex.code.chars().count(), *i))
                .map(|(i, _)| i)
                .expect("non-empty");
            trimmed.push(icl.examples.remove(longest).id);
            text = render_prompt(&icl, cot, target);
        }
    }
    let estimated_tokens = estimate_tokens(&text);
    Ok(AugmentedPrompt {
        target_id: target.id.clone(),
        over_budget: token_budget.is_some_and(|b| estimated_tokens > b),
        icl_examples: icl.examples.len(),
        estimated_tokens,
        trimmed,
        text,
    })
}

/// Checks that each section marker occurs exactly once, in order, and that
/// the reasoning section carries all five step headings in order.
pub fn check_sections(text: &str) -> Result<(), String> {
    let mut last = 0;
    let mut positions = Vec::new();
    for marker in [ICL_MARKER, COT_MARKER, TARGET_MARKER, INSTRUCTION_MARKER] {
        let count = text.matches(marker).count();
        if count != 1 {
            return Err(format!("{marker} occurs {count} times"));
        }
        let pos = text.find(marker).expect("counted");
        if pos < last {
            return Err(format!("{marker} is out of order"));
        }
        last = pos;
        positions.push(pos);
    }
    let cot = &text[positions[1]..positions[2]];
    let mut from = 0;
    for kind in StepKind::ALL {
        match heading_position(cot, kind.heading(), from) {
            Some((_, end)) => from = end,
            None => return Err(format!("missing or misplaced \"{}\"", kind.heading())),
        }
    }
    Ok(())
}
