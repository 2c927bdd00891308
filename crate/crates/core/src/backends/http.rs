//! Blocking HTTP clients for chat-completions, embeddings and NLI servers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    BackendError, BackendErrorKind, BackendProfile, ChatBackend, ChatRequest, EmbeddingBackend,
    Fingerprint, InFlightLimiter, NliBackend,
};
use crate::retrieval::EmbeddingVector;
use crate::verification::NliDistribution;

/// Transient failures (timeouts, refused connections, 429 and 5xx) are retried
/// with exponential backoff.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

struct Transport {
    profile: BackendProfile,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: InFlightLimiter,
    retry: RetryPolicy,
    retries_taken: AtomicUsize,
}

enum Attempt {
    Done(Value),
    Retry(BackendErrorKind),
    Fail(BackendErrorKind),
}

impl Transport {
    fn new(profile: BackendProfile, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(profile.timeout())
            .build()
            .expect("HTTP client configuration is static");
        Transport {
            limiter: InFlightLimiter::new(profile.max_in_flight),
            profile,
            api_key,
            client,
            retry: RetryPolicy::default(),
            retries_taken: AtomicUsize::new(0),
        }
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut request = self.client.post(&self.profile.endpoint).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = match request.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() => {
                return Attempt::Retry(BackendErrorKind::Timeout)
            }
            Err(e) => return Attempt::Fail(BackendErrorKind::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendErrorKind::Timeout),
            Err(e) => return Attempt::Fail(BackendErrorKind::Transport(e.to_string())),
        };
        match status {
            200..=299 => match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fail(BackendErrorKind::MalformedResponse(e.to_string())),
            },
            401 | 403 => Attempt::Fail(BackendErrorKind::AuthFailure),
            429 => Attempt::Retry(BackendErrorKind::RateLimited),
            500..=599 => Attempt::Retry(BackendErrorKind::Http {
                status,
                body: truncate(&text),
            }),
            _ => Attempt::Fail(BackendErrorKind::Http {
                status,
                body: truncate(&text),
            }),
        }
    }

    fn post(&self, fingerprint: &Fingerprint, body: &Value) -> Result<Value, BackendError> {
        let _slot = self.limiter.acquire();
        let mut attempt = 0u32;
        loop {
            match self.attempt(body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(kind) => return Err(BackendError::new(fingerprint.clone(), kind)),
                Attempt::Retry(kind) if attempt >= self.retry.max_retries => {
                    return Err(BackendError::new(fingerprint.clone(), kind))
                }
                Attempt::Retry(kind) => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt);
                    log::warn!(
                        "{} `{}`: {kind}; retry {} of {} in {delay:?} (request {fingerprint})",
                        self.profile.endpoint,
                        self.profile.name,
                        attempt + 1,
                        self.retry.max_retries
                    );
                    self.retries_taken.fetch_add(1, Ordering::SeqCst);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

fn truncate(body: &str) -> String {
    const LIMIT: usize = 200;
    match body.char_indices().nth(LIMIT) {
        Some((cut, _)) => format!("{}…", &body[..cut]),
        None => body.to_owned(),
    }
}

fn malformed(fingerprint: &Fingerprint, what: impl Into<String>) -> BackendError {
    BackendError::new(
        fingerprint.clone(),
        BackendErrorKind::MalformedResponse(what.into()),
    )
}

macro_rules! transport_accessors {
    ($ty:ident) => {
        impl $ty {
            pub fn new(profile: BackendProfile, api_key: Option<String>) -> Self {
                $ty {
                    transport: Transport::new(profile, api_key),
                }
            }

            pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
                self.transport.retry = retry;
                self
            }

            /// Number of transient-failure retries performed so far.
            pub fn retries_taken(&self) -> usize {
                self.transport.retries_taken.load(Ordering::SeqCst)
            }

            pub fn peak_in_flight(&self) -> usize {
                self.transport.limiter.peak()
            }
        }
    };
}

/// POSTs `{model, messages, temperature}` and reads `choices[0].message.content`.
pub struct HttpChat {
    transport: Transport,
}

transport_accessors!(HttpChat);

impl ChatBackend for HttpChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let fp = request.fingerprint();
        let profile = &self.transport.profile;
        let body = json!({
            "model": profile.model,
            "messages": request.messages,
            "temperature": request.temperature.unwrap_or(profile.temperature),
        });
        let reply = self.transport.post(&fp, &body)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| malformed(&fp, "missing choices[0].message.content"))
    }

    fn supports_system(&self) -> bool {
        self.transport.profile.supports_system
    }
}

/// POSTs `{model, input: [..]}` and reads `data[i].embedding`, reordered by
/// `data[i].index` when present.
pub struct HttpEmbedder {
    transport: Transport,
}

transport_accessors!(HttpEmbedder);

impl EmbeddingBackend for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let fp = Fingerprint::embed(texts);
        if texts.is_empty() {
            return Err(BackendError::new(fp, BackendErrorKind::EmptyInput));
        }
        let body = json!({ "model": self.transport.profile.model, "input": texts });
        let reply = self.transport.post(&fp, &body)?;
        let data = reply
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(&fp, "missing `data` array"))?;
        let mut rows: Vec<(usize, Vec<f32>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let values = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(&fp, format!("data[{pos}] has no embedding")))?
                .iter()
                .map(|v| v.as_f64().map(|x| x as f32))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| malformed(&fp, format!("data[{pos}] embedding is not numeric")))?;
            rows.push((index, values));
        }
        rows.sort_by_key(|(i, _)| *i);
        if rows.len() != texts.len() || rows.iter().enumerate().any(|(i, (idx, _))| *idx != i) {
            return Err(malformed(
                &fp,
                format!(
                    "expected {} embeddings indexed 0.., got {}",
                    texts.len(),
                    rows.len()
                ),
            ));
        }
        vectors_from_rows(&fp, rows.into_iter().map(|(_, v)| v).collect())
    }
}

/// Turn raw rows into validated vectors of one shared dimension.
pub(crate) fn vectors_from_rows(
    fp: &Fingerprint,
    rows: Vec<Vec<f32>>,
) -> Result<Vec<EmbeddingVector>, BackendError> {
    let expected = rows.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() != expected {
            return Err(BackendError::new(
                fp.clone(),
                BackendErrorKind::DimensionMismatch {
                    expected,
                    found: row.len(),
                },
            ));
        }
        out.push(EmbeddingVector::new(row).map_err(|e| malformed(fp, e.to_string()))?);
    }
    Ok(out)
}

/// POSTs `{model, premise, hypothesis}`. Accepts either
/// `{"entailment": p, "neutral": p, "contradiction": p}` or a list of
/// `{"label", "score"}` objects.
pub struct HttpNli {
    transport: Transport,
}

transport_accessors!(HttpNli);

impl NliBackend for HttpNli {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError> {
        let fp = Fingerprint::nli(premise, hypothesis);
        let body = json!({
            "model": self.transport.profile.model,
            "premise": premise,
            "hypothesis": hypothesis,
        });
        let reply = self.transport.post(&fp, &body)?;
        parse_nli_reply(&reply).map_err(|e| match e {
            NliReplyError::Shape(msg) => malformed(&fp, msg),
            NliReplyError::Distribution(msg) => {
                BackendError::new(fp.clone(), BackendErrorKind::InvalidDistribution(msg))
            }
        })
    }
}

enum NliReplyError {
    Shape(String),
    Distribution(String),
}

fn label_slot(label: &str) -> Option<usize> {
    match label.to_ascii_lowercase().as_str() {
        "entailment" | "ent" | "entails" => Some(0),
        "neutral" | "neut" => Some(1),
        "contradiction" | "contr" | "contradicts" => Some(2),
        _ => None,
    }
}

fn parse_nli_reply(reply: &Value) -> Result<NliDistribution, NliReplyError> {
    let mut probs = [None::<f64>; 3];
    match reply {
        Value::Object(map) => {
            for (k, v) in map {
                if let Some(slot) = label_slot(k) {
                    probs[slot] = v.as_f64();
                }
            }
        }
        Value::Array(items) => {
            for item in items {
                let label = item.get("label").and_then(Value::as_str);
                let score = item.get("score").and_then(Value::as_f64);
                if let (Some(slot), Some(score)) = (label.and_then(label_slot), score) {
                    probs[slot] = Some(score);
                }
            }
        }
        _ => return Err(NliReplyError::Shape("expected an object or a list".into())),
    }
    match probs {
        [Some(e), Some(n), Some(c)] => NliDistribution::new(e, n, c)
            .map_err(|err| NliReplyError::Distribution(err.to_string())),
        _ => Err(NliReplyError::Shape(
            "missing one of entailment/neutral/contradiction".into(),
        )),
    }
}
