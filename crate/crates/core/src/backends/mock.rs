//! Deterministic offline backends.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::http::vectors_from_rows;
use super::{
    BackendError, BackendErrorKind, ChatBackend, ChatRequest, EmbeddingBackend, Fingerprint,
    NliBackend,
};
use crate::jsonl::{self, JsonlError};
use crate::retrieval::EmbeddingVector;
use crate::text::{
    contains_phrase, fnv1a, normalize_for_match, padded_token_string, unigram_tokens,
};
use crate::verification::NliDistribution;

/// Wildcard fingerprint: matches any request once keyed entries run out.
pub const ANY_REQUEST: &str = "*";

/// One line of a mock script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub fingerprint: String,
    pub response: String,
}

impl ScriptEntry {
    pub fn for_request(request: &ChatRequest, response: impl Into<String>) -> Self {
        ScriptEntry {
            fingerprint: request.fingerprint().0,
            response: response.into(),
        }
    }
}

/// Write entries in the format [`MockScript::load`] reads.
pub fn write_script(path: &Path, entries: &[ScriptEntry]) -> Result<usize, JsonlError> {
    jsonl::write_jsonl(path, None, entries)
}

/// Responses queued per request fingerprint. Each response is served once,
/// in file order.
#[derive(Debug, Clone, Default)]
pub struct MockScript {
    keyed: HashMap<String, VecDeque<String>>,
    wildcard: VecDeque<String>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut script = Self::new();
        for e in entries {
            script.push_raw(e.fingerprint, e.response);
        }
        script
    }

    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        let (_, entries): (_, Vec<ScriptEntry>) = jsonl::read_jsonl(path, None)?;
        Ok(Self::from_entries(entries))
    }

    fn push_raw(&mut self, fingerprint: String, response: String) {
        if fingerprint == ANY_REQUEST {
            self.wildcard.push_back(response);
        } else {
            self.keyed
                .entry(fingerprint)
                .or_default()
                .push_back(response);
        }
    }

    pub fn push(&mut self, request: &ChatRequest, response: impl Into<String>) -> &mut Self {
        self.push_raw(request.fingerprint().0, response.into());
        self
    }

    pub fn push_any(&mut self, response: impl Into<String>) -> &mut Self {
        self.wildcard.push_back(response.into());
        self
    }

    fn next(&mut self, fingerprint: &Fingerprint) -> Option<String> {
        self.keyed
            .get_mut(fingerprint.as_str())
            .and_then(VecDeque::pop_front)
            .or_else(|| self.wildcard.pop_front())
    }

    pub fn remaining(&self) -> usize {
        self.keyed.values().map(VecDeque::len).sum::<usize>() + self.wildcard.len()
    }
}

/// Replays a [`MockScript`]; fails with `ScriptExhausted` once the matching
/// queue is empty.
#[derive(Debug)]
pub struct ScriptedChat {
    script: Mutex<MockScript>,
    calls: Mutex<Vec<Fingerprint>>,
    supports_system: bool,
}

impl ScriptedChat {
    pub fn new(script: MockScript) -> Self {
        ScriptedChat {
            script: Mutex::new(script),
            calls: Mutex::new(Vec::new()),
            supports_system: true,
        }
    }

    pub fn with_system_support(mut self, supported: bool) -> Self {
        self.supports_system = supported;
        self
    }

    /// Fingerprints of every request received, in arrival order.
    pub fn calls(&self) -> Vec<Fingerprint> {
        self.calls.lock().expect("mock poisoned").clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("mock poisoned").remaining()
    }
}

impl ChatBackend for ScriptedChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let fp = request.fingerprint();
        self.calls.lock().expect("mock poisoned").push(fp.clone());
        self.script
            .lock()
            .expect("mock poisoned")
            .next(&fp)
            .ok_or_else(|| BackendError::new(fp, BackendErrorKind::ScriptExhausted))
    }

    fn supports_system(&self) -> bool {
        self.supports_system
    }
}

/// Answers every request with the same text.
#[derive(Debug, Clone)]
pub struct ConstantChat {
    reply: String,
}

impl ConstantChat {
    pub fn new(reply: impl Into<String>) -> Self {
        ConstantChat {
            reply: reply.into(),
        }
    }
}

impl ChatBackend for ConstantChat {
    fn chat(&self, _request: &ChatRequest) -> Result<String, BackendError> {
        Ok(self.reply.clone())
    }
}

/// Signed feature hashing of lowercased, punctuation-free tokens, L2
/// normalized. Identical texts map to identical vectors.
#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dimension: usize,
}

impl HashedBowEmbedder {
    pub fn new(dimension: usize) -> Self {
        HashedBowEmbedder {
            dimension: dimension.max(1),
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dimension];
        for token in unigram_tokens(text) {
            let h = fnv1a(token.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dimension as u64) as usize] += sign;
        }
        l2_normalize(&mut v);
        v
    }
}

impl EmbeddingBackend for HashedBowEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let fp = Fingerprint::embed(texts);
        if texts.is_empty() {
            return Err(BackendError::new(fp, BackendErrorKind::EmptyInput));
        }
        vectors_from_rows(&fp, texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// A unit Gaussian direction seeded by the normalized text: equal texts embed
/// identically, distinct texts land on near-orthogonal random directions.
#[derive(Debug, Clone)]
pub struct ExactMatchEmbedder {
    dimension: usize,
}

impl ExactMatchEmbedder {
    pub fn new(dimension: usize) -> Self {
        ExactMatchEmbedder {
            dimension: dimension.max(1),
        }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(normalize_for_match(text).as_bytes()));
        let mut v: Vec<f32> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        l2_normalize(&mut v);
        v
    }
}

impl EmbeddingBackend for ExactMatchEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let fp = Fingerprint::embed(texts);
        if texts.is_empty() {
            return Err(BackendError::new(fp, BackendErrorKind::EmptyInput));
        }
        vectors_from_rows(&fp, texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

fn l2_normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (f64::from(*x) / norm) as f32;
        }
    }
}

/// Rule-based NLI:
/// - hypothesis tokens appear contiguously in the premise: entailment;
/// - hypothesis mentions one side of a configured contradiction pair while the
///   premise mentions only the other side: contradiction;
/// - otherwise neutral.
#[derive(Debug, Clone, Default)]
pub struct RuleNli {
    contradictions: Vec<(String, String)>,
}

impl RuleNli {
    pub const ENTAILED: (f64, f64, f64) = (0.9, 0.05, 0.05);
    pub const CONTRADICTED: (f64, f64, f64) = (0.05, 0.05, 0.9);
    pub const NEUTRAL: (f64, f64, f64) = (0.05, 0.9, 0.05);

    pub fn new(contradictions: Vec<(String, String)>) -> Self {
        RuleNli { contradictions }
    }

    fn contradicts(&self, premise: &str, hypothesis: &str) -> bool {
        self.contradictions.iter().any(|(a, b)| {
            let one_way = |x: &str, y: &str| {
                contains_phrase(hypothesis, y)
                    && contains_phrase(premise, x)
                    && !contains_phrase(premise, y)
            };
            one_way(a, b) || one_way(b, a)
        })
    }

    pub fn judge(&self, premise: &str, hypothesis: &str) -> NliDistribution {
        let hyp = padded_token_string(hypothesis);
        let (e, n, c) = if !hyp.trim().is_empty() && padded_token_string(premise).contains(&hyp) {
            Self::ENTAILED
        } else if self.contradicts(premise, hypothesis) {
            Self::CONTRADICTED
        } else {
            Self::NEUTRAL
        };
        NliDistribution::new(e, n, c).expect("constant distributions are valid")
    }
}

impl NliBackend for RuleNli {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError> {
        Ok(self.judge(premise, hypothesis))
    }
}

/// Looks up the distribution by exact premise text; unknown premises get the
/// fallback.
#[derive(Debug, Clone)]
pub struct TableNli {
    by_premise: HashMap<String, NliDistribution>,
    fallback: NliDistribution,
}

impl TableNli {
    pub fn new(fallback: NliDistribution) -> Self {
        TableNli {
            by_premise: HashMap::new(),
            fallback,
        }
    }

    pub fn insert(&mut self, premise: impl Into<String>, dist: NliDistribution) -> &mut Self {
        self.by_premise.insert(premise.into(), dist);
        self
    }
}

impl NliBackend for TableNli {
    fn nli(&self, premise: &str, _hypothesis: &str) -> Result<NliDistribution, BackendError> {
        Ok(*self.by_premise.get(premise).unwrap_or(&self.fallback))
    }
}
