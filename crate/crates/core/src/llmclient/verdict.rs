use serde::{Deserialize, Serialize};

use super::LlmResponse;
use crate::corpus::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Yes,
    No,
    Unparseable,
}

/// How an unparseable answer enters the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnparseablePolicy {
    #[default]
    AsNegative,
    AsPositive,
}

impl Decision {
    pub fn label(self, policy: UnparseablePolicy) -> Label {
        match (self, policy) {
            (Decision::Yes, _) | (Decision::Unparseable, UnparseablePolicy::AsPositive) => {
                Label::Vulnerable
            }
            _ => Label::Benign,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub explanation: String,
    pub raw: LlmResponse,
}

const MARKUP: &[char] = &['*', '_', '#', '>', '`', '"', '\'', '[', '(', '-', '\u{201c}'];
const SEPARATORS: &[char] = &[
    '.', ',', ':', ';', '!', '*', '_', '-', '\u{2014}', '\u{2013}', ')', ']', '"', '`', '\u{201d}',
];

const NEGATIVE: &[&str] = &[
    "is not vulnerable",
    "isn't vulnerable",
    "not vulnerable",
    "is not buggy",
    "not buggy",
    "no vulnerability",
    "no vulnerabilities",
];
const POSITIVE: &[&str] = &[
    "is vulnerable",
    "is buggy",
    "contains a vulnerability",
    "vulnerable",
    "buggy",
];

/// Decision and explanation from raw answer text. Never panics.
pub fn parse_verdict_text(text: &str) -> (Decision, String) {
    let body = text.trim_start_matches(|c: char| c.is_whitespace() || MARKUP.contains(&c));
    let word_end = body
        .find(|c: char| !c.is_alphabetic())
        .unwrap_or(body.len());
    let decision = match body[..word_end].to_lowercase().as_str() {
        "yes" => Some(Decision::Yes),
        "no" => Some(Decision::No),
        _ => None,
    };
    if let Some(decision) = decision {
        let explanation = body[word_end..]
            .trim_start_matches(|c: char| c.is_whitespace() || SEPARATORS.contains(&c))
            .trim_end()
            .to_owned();
        return (decision, explanation);
    }
    let sentence_end = body
        .find(['.', '!', '?', '\n'])
        .unwrap_or(body.len());
    let first = body[..sentence_end].to_lowercase();
    let decision = if NEGATIVE.iter().any(|p| first.contains(p)) {
        Decision::No
    } else if POSITIVE.iter().any(|p| first.contains(p)) {
        Decision::Yes
    } else {
        Decision::Unparseable
    };
    (decision, text.trim().to_owned())
}

pub fn parse_verdict(response: LlmResponse) -> Verdict {
    let (decision, explanation) = parse_verdict_text(&response.text);
    Verdict {
        decision,
        explanation,
        raw: response,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn leading_answers() {
        assert_eq!(
            parse_verdict_text("Yes. The strcpy call overflows buf."),
            (Decision::Yes, "The strcpy call overflows buf.".into())
        );
        assert_eq!(parse_verdict_text("no"), (Decision::No, String::new()));
        assert_eq!(
            parse_verdict_text("**YES** \u{2014} off-by-one in the loop bound"),
            (Decision::Yes, "off-by-one in the loop bound".into())
        );
        assert_eq!(parse_verdict_text("No, it checks len.").0, Decision::No);
    }

    #[test]
    fn sentence_patterns() {
        assert_eq!(
            parse_verdict_text("The program is not vulnerable because len is checked.").0,
            Decision::No
        );
        assert_eq!(
            parse_verdict_text("This function is vulnerable to overflow.").0,
            Decision::Yes
        );
        assert_eq!(
            parse_verdict_text("It depends on the caller.").0,
            Decision::Unparseable
        );
        assert_eq!(parse_verdict_text("").0, Decision::Unparseable);
    }

    #[test]
    fn words_starting_with_answers_do_not_count() {
        assert_eq!(parse_verdict_text("Nothing to report.").0, Decision::Unparseable);
        assert_eq!(parse_verdict_text("Yesterday it was fine.").0, Decision::Unparseable);
    }

    #[test]
    fn policy_mapping() {
        assert_eq!(
            Decision::Unparseable.label(UnparseablePolicy::AsNegative),
            Label::Benign
        );
        assert_eq!(
            Decision::Unparseable.label(UnparseablePolicy::AsPositive),
            Label::Vulnerable
        );
        assert_eq!(Decision::Yes.label(UnparseablePolicy::AsNegative), Label::Vulnerable);
    }

    proptest! {
        #[test]
        fn never_panics(text in "\\PC{0,80}") {
            let _ = parse_verdict_text(&text);
        }
    }
}
