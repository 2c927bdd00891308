//! Inference backends: chat completion, embeddings and NLI.
//!
//! Every backend is a `Send + Sync` trait object so one instance can be shared
//! by the parallel stages. HTTP implementations speak the common
//! chat-completions / embeddings JSON shapes; the mocks in [`mock`] are pure
//! functions of their inputs and make the whole pipeline testable offline.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::retrieval::EmbeddingVector;
use crate::verification::NliDistribution;

pub mod http;
pub mod mock;
pub mod profile;

pub use profile::{BackendKind, BackendProfile, ProfileError, Provider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// One chat completion request. `temperature: None` defers to the backend's
/// configured default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: Option<f64>,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        ChatRequest {
            messages,
            temperature: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = Some(temperature);
        self
    }

    /// Single user turn.
    pub fn user(content: impl Into<String>) -> Self {
        Self::new(vec![Message::user(content)])
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of("chat", self)
    }
}

/// Hex SHA-256 prefix of a canonicalized request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl Fingerprint {
    pub fn of<T: Serialize + ?Sized>(kind: &str, request: &T) -> Self {
        let body = serde_json::to_string(request).expect("requests serialize");
        let mut hasher = Sha256::new();
        hasher.update(kind.as_bytes());
        hasher.update([0u8]);
        hasher.update(body.as_bytes());
        let digest = hasher.finalize();
        Fingerprint(digest[..16].iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn embed(texts: &[String]) -> Self {
        Self::of("embed", texts)
    }

    pub fn nli(premise: &str, hypothesis: &str) -> Self {
        Self::of("nli", &(premise, hypothesis))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendErrorKind {
    #[error("request timed out or endpoint unreachable")]
    Timeout,
    #[error("authentication failed")]
    AuthFailure,
    #[error("rate limited")]
    RateLimited,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid NLI distribution: {0}")]
    InvalidDistribution(String),
    #[error("HTTP status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("mock script has no response left for this request")]
    ScriptExhausted,
    #[error("empty input")]
    EmptyInput,
}

/// A backend failure tagged with the fingerprint of the request that caused it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind} (request {fingerprint})")]
pub struct BackendError {
    pub fingerprint: Fingerprint,
    pub kind: BackendErrorKind,
}

impl BackendError {
    pub fn new(fingerprint: Fingerprint, kind: BackendErrorKind) -> Self {
        BackendError { fingerprint, kind }
    }
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError>;

    /// Whether instructions may go in a dedicated system message.
    fn supports_system(&self) -> bool {
        true
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

pub trait NliBackend: Send + Sync {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(request)
    }
    fn supports_system(&self) -> bool {
        (**self).supports_system()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(request)
    }
    fn supports_system(&self) -> bool {
        (**self).supports_system()
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for &T {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed(texts)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        (**self).embed(texts)
    }
}

impl<T: NliBackend + ?Sized> NliBackend for &T {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError> {
        (**self).nli(premise, hypothesis)
    }
}

impl<T: NliBackend + ?Sized> NliBackend for Box<T> {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError> {
        (**self).nli(premise, hypothesis)
    }
}

/// Counting semaphore bounding concurrent backend calls. Records the highest
/// concurrency it ever admitted.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    active: Mutex<usize>,
    released: Condvar,
    peak: AtomicUsize,
}

pub struct InFlightGuard<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max_in_flight: usize) -> Self {
        InFlightLimiter {
            max: max_in_flight.max(1),
            active: Mutex::new(0),
            released: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("limiter poisoned");
        while *active >= self.max {
            active = self.released.wait(active).expect("limiter poisoned");
        }
        *active += 1;
        self.peak.fetch_max(*active, Ordering::SeqCst);
        InFlightGuard { limiter: self }
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.limiter.active.lock().expect("limiter poisoned");
        *active -= 1;
        self.limiter.released.notify_one();
    }
}

/// Wraps any backend so that at most `max_in_flight` calls run at once.
pub struct Limited<B> {
    inner: B,
    limiter: InFlightLimiter,
}

impl<B> Limited<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Limited {
            inner,
            limiter: InFlightLimiter::new(max_in_flight),
        }
    }

    pub fn limiter(&self) -> &InFlightLimiter {
        &self.limiter
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for Limited<B> {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let _slot = self.limiter.acquire();
        self.inner.chat(request)
    }
    fn supports_system(&self) -> bool {
        self.inner.supports_system()
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for Limited<B> {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let _slot = self.limiter.acquire();
        self.inner.embed(texts)
    }
}

impl<B: NliBackend> NliBackend for Limited<B> {
    fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliDistribution, BackendError> {
        let _slot = self.limiter.acquire();
        self.inner.nli(premise, hypothesis)
    }
}
