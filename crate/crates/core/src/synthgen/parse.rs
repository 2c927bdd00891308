//! Lenient parsing of the generator's JSON reply.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no well-formed JSON object found in output")]
    MalformedOutput,
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("`{key}` has the wrong type: expected {expected}")]
    TypeMismatch {
        key: &'static str,
        expected: &'static str,
    },
}

/// Falsified claim paired with the claim it was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FalsifiedPair {
    pub altered: String,
    pub original: String,
}

/// The four generation outputs: claims, one falsified pair, the factual
/// paraphrase and its unfactual twin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutputs {
    pub claims: Vec<String>,
    pub falsified: FalsifiedPair,
    pub factual_text: String,
    pub unfactual_text: String,
}

impl StepOutputs {
    /// The reply-shaped JSON object (`step_1` … `step_4`).
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "step_1": self.claims,
            "step_2": [self.falsified.altered, self.falsified.original],
            "step_3": self.factual_text,
            "step_4": self.unfactual_text,
        })
    }

    pub fn to_reply(&self) -> String {
        self.to_json().to_string()
    }
}

/// The first JSON object embedded in `raw`, skipping any preamble, markdown
/// fences or trailing chatter.
pub fn extract_json_object(raw: &str) -> Option<Map<String, Value>> {
    raw.match_indices('{').find_map(|(start, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

fn string_list(
    value: &Value,
    key: &'static str,
    expected: &'static str,
) -> Result<Vec<String>, ParseError> {
    let mismatch = || ParseError::TypeMismatch { key, expected };
    value
        .as_array()
        .ok_or_else(mismatch)?
        .iter()
        .map(|v| v.as_str().map(str::to_owned).ok_or_else(mismatch))
        .collect()
}

fn field<'a>(obj: &'a Map<String, Value>, key: &'static str) -> Result<&'a Value, ParseError> {
    obj.get(key).ok_or(ParseError::MissingKey(key))
}

/// The `step_1` claim list from a reply.
pub fn parse_claim_list(raw: &str) -> Result<Vec<String>, ParseError> {
    let obj = extract_json_object(raw).ok_or(ParseError::MalformedOutput)?;
    string_list(field(&obj, "step_1")?, "step_1", "a list of strings")
}

pub fn parse_generation_output(raw: &str) -> Result<StepOutputs, ParseError> {
    let obj = extract_json_object(raw).ok_or(ParseError::MalformedOutput)?;
    let claims = string_list(field(&obj, "step_1")?, "step_1", "a list of strings")?;
    let pair = string_list(field(&obj, "step_2")?, "step_2", "a pair of strings")?;
    let [altered, original]: [String; 2] =
        pair.try_into().map_err(|_| ParseError::TypeMismatch {
            key: "step_2",
            expected: "a pair of strings",
        })?;
    let text = |key: &'static str| -> Result<String, ParseError> {
        field(&obj, key)?
            .as_str()
            .map(str::to_owned)
            .ok_or(ParseError::TypeMismatch {
                key,
                expected: "a string",
            })
    };
    Ok(StepOutputs {
        claims,
        falsified: FalsifiedPair { altered, original },
        factual_text: text("step_3")?,
        unfactual_text: text("step_4")?,
    })
}
