//! Resource generation: one chat call per passage with the unified prompt,
//! lenient parsing, validation and bounded retries.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ChatBackend, ChatRequest};
use crate::corpus::Passage;
use crate::jsonl::{self, JsonlError, SchemaHeader};

pub mod parse;
pub mod prompt;
pub mod validate;

pub use parse::{parse_generation_output, FalsifiedPair, ParseError, StepOutputs};
pub use prompt::build_unified_prompt;
pub use validate::{validate_record, HardFailure, ValidationReport, Warning};

pub const RECORD_SCHEMA: &str = "factline.resource";
pub const RECORD_SCHEMA_VERSION: u32 = 1;
pub const GENERATION_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRecord {
    pub record_id: String,
    pub passage: Passage,
    pub outputs: StepOutputs,
    pub validation: ValidationReport,
    /// Position of the falsified claim's original within `outputs.claims`.
    pub falsified_index: Option<usize>,
    #[serde(default)]
    pub retries: u32,
}

impl ResourceRecord {
    /// Assemble and validate a record from already-parsed outputs.
    pub fn new(record_id: impl Into<String>, passage: Passage, outputs: StepOutputs) -> Self {
        let validation = validate_record(&passage, &outputs);
        let falsified_index = validate::locate_original(&outputs).map(|m| m.index());
        ResourceRecord {
            record_id: record_id.into(),
            passage,
            outputs,
            validation,
            falsified_index,
            retries: 0,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.validation.is_usable()
    }

    pub fn claims(&self) -> &[String] {
        &self.outputs.claims
    }

    pub fn original_claim(&self) -> &str {
        &self.outputs.falsified.original
    }

    pub fn falsified_claim(&self) -> &str {
        &self.outputs.falsified.altered
    }
}

/// Why one generation attempt was rejected.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttemptFailure {
    #[error("unparseable output: {0}")]
    Parse(#[from] ParseError),
    #[error("validation failed: {0:?}")]
    Invalid(Vec<HardFailure>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerateError {
    #[error("backend error: {0}")]
    Backend(#[from] BackendError),
    #[error("gave up after {attempts} attempts; last failure: {last}")]
    ExhaustedRetries { attempts: u32, last: AttemptFailure },
}

/// Generate one record for `passage`, retrying up to `max_retries` times when
/// the reply does not parse or fails a hard check. Transport errors abort
/// immediately (the backend already retried them).
pub fn generate_record(
    passage: &Passage,
    chat: &dyn ChatBackend,
    max_retries: u32,
) -> Result<ResourceRecord, GenerateError> {
    let request =
        ChatRequest::user(build_unified_prompt(passage)).with_temperature(GENERATION_TEMPERATURE);
    let mut attempt = 0u32;
    loop {
        let reply = chat.chat(&request)?;
        let failure = match parse_generation_output(&reply) {
            Ok(outputs) => {
                let mut record =
                    ResourceRecord::new(passage.passage_id.clone(), passage.clone(), outputs);
                if record.is_usable() {
                    record.retries = attempt;
                    return Ok(record);
                }
                AttemptFailure::Invalid(record.validation.hard_failures)
            }
            Err(e) => AttemptFailure::Parse(e),
        };
        if attempt >= max_retries {
            return Err(GenerateError::ExhaustedRetries {
                attempts: attempt + 1,
                last: failure,
            });
        }
        log::debug!(
            "{}: attempt {} rejected ({failure}); retrying",
            passage.passage_id,
            attempt + 1
        );
        attempt += 1;
    }
}

/// Generate records for many passages with at most `max_in_flight` running at
/// once. Results come back in input order.
pub fn generate_records(
    passages: &[Passage],
    chat: &dyn ChatBackend,
    max_retries: u32,
    max_in_flight: usize,
) -> Vec<Result<ResourceRecord, GenerateError>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        passages
            .par_iter()
            .map(|p| generate_record(p, chat, max_retries))
            .collect()
    })
}

pub fn record_header() -> SchemaHeader {
    SchemaHeader::new(RECORD_SCHEMA, RECORD_SCHEMA_VERSION)
}

pub fn write_records(path: &Path, records: &[ResourceRecord]) -> Result<usize, JsonlError> {
    jsonl::write_jsonl(path, Some(&record_header()), records)
}

pub fn read_records(path: &Path) -> Result<Vec<ResourceRecord>, JsonlError> {
    Ok(jsonl::read_jsonl(path, Some((RECORD_SCHEMA, RECORD_SCHEMA_VERSION)))?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockScript, ScriptedChat};
    use crate::backends::BackendErrorKind;

    fn passage() -> Passage {
        Passage::from_text("Sea", "The sea is salty. The river is wet.")
    }

    fn good_reply() -> String {
        StepOutputs {
            claims: vec!["The sea is salty.".into(), "The river is wet.".into()],
            falsified: FalsifiedPair {
                altered: "The sea is sweet.".into(),
                original: "The sea is salty.".into(),
            },
            factual_text: "Salt fills the ocean, while rivers carry water.".into(),
            unfactual_text: "Sugar fills the ocean, while rivers carry water.".into(),
        }
        .to_reply()
    }

    fn chat_with(replies: &[&str]) -> ScriptedChat {
        let request = ChatRequest::user(build_unified_prompt(&passage())).with_temperature(0.0);
        let mut script = MockScript::new();
        for r in replies {
            script.push(&request, *r);
        }
        ScriptedChat::new(script)
    }

    #[test]
    fn retries_then_succeeds() {
        let good = good_reply();
        let chat = chat_with(&["garbage", "{\"step_1\": 5}", &good]);
        let record = generate_record(&passage(), &chat, 3).unwrap();
        assert_eq!(record.retries, 2);
        assert_eq!(record.falsified_index, Some(0));
        assert_eq!(chat.calls().len(), 3);
    }

    #[test]
    fn exhausts_retries() {
        let chat = chat_with(&["nope"; 10]);
        match generate_record(&passage(), &chat, 3) {
            Err(GenerateError::ExhaustedRetries { attempts, last }) => {
                assert_eq!(attempts, 4);
                assert_eq!(last, AttemptFailure::Parse(ParseError::MalformedOutput));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_outputs_are_retried() {
        let bad = good_reply().replace("The sea is sweet.", "The sea is salty.");
        let good = good_reply();
        let chat = chat_with(&[&bad, &good]);
        assert_eq!(generate_record(&passage(), &chat, 1).unwrap().retries, 1);
        let chat = chat_with(&[&bad]);
        assert!(matches!(
            generate_record(&passage(), &chat, 0),
            Err(GenerateError::ExhaustedRetries {
                last: AttemptFailure::Invalid(_),
                ..
            })
        ));
    }

    #[test]
    fn backend_errors_abort() {
        let chat = chat_with(&[]);
        match generate_record(&passage(), &chat, 5) {
            Err(GenerateError::Backend(e)) => assert_eq!(e.kind, BackendErrorKind::ScriptExhausted),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn records_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let record = ResourceRecord::new(
            "r1",
            passage(),
            parse_generation_output(&good_reply()).unwrap(),
        );
        write_records(&path, std::slice::from_ref(&record)).unwrap();
        let first_line = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_owned();
        assert_eq!(first_line, r#"{"schema":"factline.resource","version":1}"#);
        assert_eq!(read_records(&path).unwrap(), vec![record]);
    }

    #[test]
    fn batch_generation_keeps_order() {
        let passages: Vec<Passage> = (0..6)
            .map(|i| {
                Passage::from_text(
                    &format!("p{i}"),
                    &format!("Fact number {i} holds. Another fact {i}."),
                )
            })
            .collect();
        let mut script = MockScript::new();
        for p in &passages {
            let req = ChatRequest::user(build_unified_prompt(p)).with_temperature(0.0);
            let out = StepOutputs {
                claims: p.sentences.clone(),
                falsified: FalsifiedPair {
                    altered: "Nothing holds.".into(),
                    original: p.sentences[0].clone(),
                },
                factual_text: p.text.to_uppercase(),
                unfactual_text: p.text.to_uppercase(),
            };
            script.push(&req, out.to_reply());
        }
        let chat = ScriptedChat::new(script);
        let results = generate_records(&passages, &chat, 0, 3);
        let ids: Vec<_> = results
            .iter()
            .map(|r| r.as_ref().unwrap().record_id.clone())
            .collect();
        assert_eq!(ids, ["p0#0", "p1#0", "p2#0", "p3#0", "p4#0", "p5#0"]);
    }
}
