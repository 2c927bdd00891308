//! LLM-baseline prompts and verdict parsing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::Message;
use crate::text::approx_tokens;
use crate::verification::Evidence;

pub const ZS_INSTRUCTIONS: &str = "Determine whether the given text is factual or not.

1. Read the input text.
2. Evaluate the factual accuracy of the input text based on your training data and knowledge.
3. If the input text is factually-accurate, i.e. supported by known information, respond with \"Factual\"
4. Respond with \"Not Factual\" if the input text contains even a single inaccuracy.
5. Just reply with \"Factual\" or \"Not Factual\", do not generate any additional text to the answer.";

pub const RAG_INSTRUCTIONS: &str = "Determine whether the given text is factual or not using the provided evidence. If the information is not present in the evidence, rely on prior knowledge.
1. Read the input text.
2. Read the evidence if provided.
3. Assess whether the input text is factual based on the evidence if present.
4. If the evidence are not provided or is insufficient, use your prior knowledge to determine the factuality.
5. Respond with \"Not Factual\" if the input text contains even a single inaccuracy.
6. If the evidence is not related to the text to verify, rely on your prior knowledge to provide the answer.
7. Just reply with \"Factual\" or \"Not Factual\", do not generate any additional text to the answer.";

pub const EXPLAIN_INSTRUCTIONS: &str =
    "Motivate your response with an explanation and then reply with \"Factual\" or \"Not Factual\"
Output format:
## EXPLANATION: explanation
## LABEL: label, i.e., \"Factual\" or \"Not Factual\"";

pub const FACTUAL: &str = "Factual";
pub const NOT_FACTUAL: &str = "Not Factual";
pub const LABEL_MARKER: &str = "## LABEL:";
pub const EXPLANATION_MARKER: &str = "## EXPLANATION:";

/// Placed between the text under test and its evidence passages.
pub const DEFAULT_EVIDENCE_SEPARATOR: &str = "\n\nEvidence:\n";
pub const DEFAULT_FEW_SHOT_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Zs,
    Fs,
    ZsEx,
    FsEx,
    Rag,
}

impl PromptMode {
    pub fn few_shot(self) -> bool {
        matches!(self, PromptMode::Fs | PromptMode::FsEx)
    }

    pub fn explain(self) -> bool {
        matches!(self, PromptMode::ZsEx | PromptMode::FsEx)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Zs => "zs",
            PromptMode::Fs => "fs",
            PromptMode::ZsEx => "zs_ex",
            PromptMode::FsEx => "fs_ex",
            PromptMode::Rag => "rag",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "zs" => PromptMode::Zs,
            "fs" => PromptMode::Fs,
            "zs_ex" => PromptMode::ZsEx,
            "fs_ex" => PromptMode::FsEx,
            "rag" => PromptMode::Rag,
            other => {
                return Err(format!(
                    "unknown prompt mode `{other}` (expected zs, fs, zs_ex, fs_ex or rag)"
                ))
            }
        })
    }
}

/// A labeled demonstration for few-shot prompting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub text: String,
    #[serde(default)]
    pub evidence: Vec<String>,
    pub label: bool,
    #[serde(default)]
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("RAG prompts need evidence passages")]
    MissingEvidence,
    #[error("few-shot prompts need at least one example")]
    MissingExamples,
    #[error("few-shot example {0} has no explanation, which explain mode requires")]
    MissingExplanation(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    #[serde(default)]
    pub few_shot_examples: Vec<FewShotExample>,
    /// Ranked evidence; when present the evidence-aware instructions are used
    /// whatever the mode.
    #[serde(default)]
    pub evidence: Option<Vec<Evidence>>,
    #[serde(default)]
    pub token_budget: Option<usize>,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    DEFAULT_EVIDENCE_SEPARATOR.to_owned()
}

impl PromptSpec {
    pub fn new(mode: PromptMode) -> Self {
        PromptSpec {
            mode,
            few_shot_examples: Vec::new(),
            evidence: None,
            token_budget: None,
            separator: default_separator(),
        }
    }

    pub fn with_examples(mut self, examples: Vec<FewShotExample>) -> Self {
        self.few_shot_examples = examples;
        self
    }

    pub fn with_evidence(mut self, evidence: Vec<Evidence>) -> Self {
        self.evidence = Some(evidence);
        self
    }

    pub fn with_token_budget(mut self, budget: usize) -> Self {
        self.token_budget = Some(budget);
        self
    }

    pub fn with_separator(mut self, separator: impl Into<String>) -> Self {
        self.separator = separator.into();
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.mode == PromptMode::Rag && self.evidence.as_ref().is_none_or(|e| e.is_empty()) {
            return Err(PromptError::MissingEvidence);
        }
        if self.mode.few_shot() {
            if self.few_shot_examples.is_empty() {
                return Err(PromptError::MissingExamples);
            }
            if self.mode.explain() {
                if let Some(i) = self
                    .few_shot_examples
                    .iter()
                    .position(|e| e.explanation.is_none())
                {
                    return Err(PromptError::MissingExplanation(i));
                }
            }
        }
        Ok(())
    }

    fn uses_evidence(&self) -> bool {
        self.mode == PromptMode::Rag || self.evidence.is_some()
    }

    /// The instruction block for this spec.
    pub fn instructions(&self) -> String {
        let base = if self.uses_evidence() {
            RAG_INSTRUCTIONS
        } else {
            ZS_INSTRUCTIONS
        };
        if self.mode.explain() {
            format!("{base}\n\n{EXPLAIN_INSTRUCTIONS}")
        } else {
            base.to_owned()
        }
    }
}

pub fn verdict_label(factual: bool) -> &'static str {
    if factual {
        FACTUAL
    } else {
        NOT_FACTUAL
    }
}

fn with_evidence<S: AsRef<str>>(text: &str, separator: &str, passages: &[S]) -> String {
    if passages.is_empty() {
        return text.to_owned();
    }
    let joined: Vec<&str> = passages.iter().map(AsRef::as_ref).collect();
    format!("{text}{separator}{}", joined.join("\n"))
}

fn assistant_turn(example: &FewShotExample, explain: bool) -> String {
    let label = verdict_label(example.label);
    match (&example.explanation, explain) {
        (Some(why), true) => format!("{EXPLANATION_MARKER} {why}\n{LABEL_MARKER} {label}"),
        _ => label.to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuiltPrompt {
    pub messages: Vec<Message>,
    /// How many evidence passages survived the token budget.
    pub evidence_included: usize,
}

/// Assemble the message sequence. Instructions take the system slot when the
/// backend has one and otherwise prefix the first user turn. Under a token
/// budget, evidence passages are dropped whole from the lowest rank upward.
pub fn build_prompt(
    spec: &PromptSpec,
    text: &str,
    supports_system: bool,
) -> Result<BuiltPrompt, PromptError> {
    spec.validate()?;
    let passages: Vec<&str> = spec
        .evidence
        .iter()
        .flatten()
        .map(|e| e.text.as_str())
        .collect();
    let assemble = |n: usize| {
        let mut turns = Vec::new();
        if spec.mode.few_shot() {
            for ex in &spec.few_shot_examples {
                turns.push(Message::user(with_evidence(
                    &ex.text,
                    &spec.separator,
                    &ex.evidence,
                )));
                turns.push(Message::assistant(assistant_turn(ex, spec.mode.explain())));
            }
        }
        turns.push(Message::user(with_evidence(
            text,
            &spec.separator,
            &passages[..n],
        )));
        let instructions = spec.instructions();
        if supports_system {
            turns.insert(0, Message::system(instructions));
        } else {
            let first = &mut turns[0];
            first.content = format!("{instructions}\n\n{}", first.content);
        }
        turns
    };
    let mut n = passages.len();
    let mut messages = assemble(n);
    if let Some(budget) = spec.token_budget {
        let cost = |m: &[Message]| m.iter().map(|m| approx_tokens(&m.content)).sum::<usize>();
        while n > 0 && cost(&messages) > budget {
            n -= 1;
            messages = assemble(n);
        }
    }
    Ok(BuiltPrompt {
        messages,
        evidence_included: n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no verdict found in model output: {0:?}")]
pub struct UnparseableVerdict(pub String);

/// Read a "Factual"/"Not Factual" verdict. "not factual" is checked first
/// because it contains "factual". In explain mode only the text after the
/// last label marker counts.
pub fn parse_llm_verdict(raw: &str, explain_mode: bool) -> Result<bool, UnparseableVerdict> {
    let lower = raw.to_lowercase();
    let lower = crate::text::collapse_whitespace(&lower);
    let scope = if explain_mode {
        let marker = LABEL_MARKER.to_lowercase();
        match lower.rfind(&marker) {
            Some(at) => &lower[at + marker.len()..],
            None => return Err(UnparseableVerdict(raw.to_owned())),
        }
    } else {
        lower.as_str()
    };
    if scope.contains("not factual") {
        Ok(false)
    } else if scope.contains("factual") {
        Ok(true)
    } else {
        Err(UnparseableVerdict(raw.to_owned()))
    }
}
