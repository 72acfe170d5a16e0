use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::corpus::FunctionRecord;

pub const ROLE_TEMPLATE: &str = "I want you to act as a Vulnerability Detection System. My first request is \u{201c}Is the following program buggy?\u{201d} Please answer Yes or No. [CODE]";
pub const AUXILIARY_TEMPLATE: &str = "I want you to act as a vulnerability detection system. I will provide you with the original program and the data flow information, and you will act upon them. Is the following program buggy? [CODE], [DF description].";
pub const COT_STEP1_TEMPLATE: &str = "Please describe the intent of the given code. [CODE].";
pub const COT_STEP2_TEMPLATE: &str = "I want you to act as a vulnerability detection system. Is the above program buggy? Please answer Yes or No";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Role,
    Auxiliary,
    Cot2step,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [Self::Role, Self::Auxiliary, Self::Cot2step];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Role => "role",
            Self::Auxiliary => "auxiliary",
            Self::Cot2step => "cot2step",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaselinePrompt {
    Single(String),
    /// Sent as consecutive turns of one conversation.
    TwoStep([String; 2]),
}

impl BaselinePrompt {
    pub fn turns(&self) -> Vec<String> {
        match self {
            Self::Single(p) => vec![p.clone()],
            Self::TwoStep(p) => p.to_vec(),
        }
    }
}

/// Fills `[CODE]` (and `[DF description]`) in the fixed template for `kind`.
/// `aux` must be given exactly for the auxiliary kind.
pub fn render_baseline(
    kind: BaselineKind,
    target: &FunctionRecord,
    aux: Option<&str>,
) -> Result<BaselinePrompt, PromptError> {
    let code = target.source.trim_end();
    Ok(match kind {
        BaselineKind::Role => BaselinePrompt::Single(ROLE_TEMPLATE.replacen("[CODE]", code, 1)),
        BaselineKind::Auxiliary => {
            let aux = aux.ok_or(PromptError::MissingAux)?;
            // Fill the aux slot first so code containing "[DF description]" is left intact.
            let text = AUXILIARY_TEMPLATE.replacen("[DF description]", aux, 1);
            BaselinePrompt::Single(text.replacen("[CODE]", code, 1))
        }
        BaselineKind::Cot2step => BaselinePrompt::TwoStep([
            COT_STEP1_TEMPLATE.replacen("[CODE]", code, 1),
            COT_STEP2_TEMPLATE.to_owned(),
        ]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn target() -> FunctionRecord {
        FunctionRecord::new("t", "p", "void f(void) {}\n", Label::Benign)
    }

    #[test]
    fn role_prefix() {
        let BaselinePrompt::Single(text) = render_baseline(BaselineKind::Role, &target(), None).unwrap()
        else {
            panic!("role is single-turn")
        };
        assert!(text.starts_with("I want you to act as a Vulnerability Detection System."));
        assert!(text.ends_with("Please answer Yes or No. void f(void) {}"));
    }

    #[test]
    fn cot_is_two_turns() {
        let prompt = render_baseline(BaselineKind::Cot2step, &target(), None).unwrap();
        let turns = prompt.turns();
        assert_eq!(turns.len(), 2);
        assert!(turns[0].contains("describe the intent"));
        assert!(turns[1].ends_with("Please answer Yes or No"));
    }

    #[test]
    fn auxiliary_needs_dataflow() {
        assert!(matches!(
            render_baseline(BaselineKind::Auxiliary, &target(), None),
            Err(PromptError::MissingAux)
        ));
        let text = render_baseline(BaselineKind::Auxiliary, &target(), Some("line 1: x defined"))
            .unwrap()
            .turns()
            .remove(0);
        assert!(text.ends_with("void f(void) {}, line 1: x defined."));
    }
}
