use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::http::{HttpChat, HttpEmbedder, HttpNli};
use super::mock::{
    ConstantChat, ExactMatchEmbedder, HashedBowEmbedder, MockScript, RuleNli, ScriptedChat,
};
use super::{ChatBackend, EmbeddingBackend, Limited, NliBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Chat,
    Embedding,
    Nli,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockEmbedding {
    #[default]
    Hashed,
    ExactMatch,
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile `{name}` is a {found:?} profile, expected {expected:?}")]
    WrongKind {
        name: String,
        expected: BackendKind,
        found: BackendKind,
    },
    #[error("profile `{name}`: {message}")]
    Invalid { name: String, message: String },
    #[error("profile `{name}`: environment variable `{var}` is not set")]
    MissingCredential { name: String, var: String },
    #[error("profile `{name}`: {source}")]
    Script {
        name: String,
        #[source]
        source: crate::jsonl::JsonlError,
    },
}

fn default_timeout() -> u64 {
    60
}

fn default_in_flight() -> usize {
    4
}

fn default_true() -> bool {
    true
}

fn default_dimension() -> usize {
    256
}

/// Connection settings for one backend. API keys are never stored here, only
/// the name of the environment variable holding them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendProfile {
    #[serde(default)]
    pub name: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub provider: Provider,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_true")]
    pub supports_system: bool,

    /// Mock chat: line-delimited fingerprint/response records.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Mock chat: fixed reply to every request.
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub embedding: MockEmbedding,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    /// Mock NLI: term pairs treated as mutually contradicting.
    #[serde(default)]
    pub contradictions: Vec<(String, String)>,
}

impl BackendProfile {
    pub fn new(name: &str, kind: BackendKind, provider: Provider) -> Self {
        BackendProfile {
            name: name.to_owned(),
            kind,
            provider,
            endpoint: String::new(),
            model: String::new(),
            auth_env: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            temperature: 0.0,
            supports_system: true,
            script: None,
            response: None,
            embedding: MockEmbedding::default(),
            dimension: default_dimension(),
            contradictions: Vec::new(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    /// Resolve relative script paths against the config file's directory.
    pub fn rebase(&mut self, base: &Path) {
        if let Some(script) = &self.script {
            if script.is_relative() {
                self.script = Some(base.join(script));
            }
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let invalid = |message: &str| ProfileError::Invalid {
            name: self.name.clone(),
            message: message.to_owned(),
        };
        if self.max_in_flight == 0 {
            return Err(invalid("max_in_flight must be at least 1"));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(invalid("temperature must be a non-negative number"));
        }
        if self.provider == Provider::Http && self.endpoint.is_empty() {
            return Err(invalid("http profiles need an endpoint"));
        }
        if self.provider == Provider::Mock
            && self.kind == BackendKind::Embedding
            && self.dimension == 0
        {
            return Err(invalid("mock embedding dimension must be positive"));
        }
        Ok(())
    }

    fn expect_kind(&self, expected: BackendKind) -> Result<(), ProfileError> {
        if self.kind != expected {
            return Err(ProfileError::WrongKind {
                name: self.name.clone(),
                expected,
                found: self.kind,
            });
        }
        self.validate()
    }

    /// The bearer token named by `auth_env`, if any.
    pub fn api_key(&self) -> Result<Option<String>, ProfileError> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => {
                std::env::var(var)
                    .map(Some)
                    .map_err(|_| ProfileError::MissingCredential {
                        name: self.name.clone(),
                        var: var.clone(),
                    })
            }
        }
    }

    pub fn build_chat(&self) -> Result<Box<dyn ChatBackend>, ProfileError> {
        self.expect_kind(BackendKind::Chat)?;
        Ok(match self.provider {
            Provider::Http => Box::new(HttpChat::new(self.clone(), self.api_key()?)),
            Provider::Mock => match (&self.script, &self.response) {
                (Some(path), _) => {
                    let script = MockScript::load(path).map_err(|source| ProfileError::Script {
                        name: self.name.clone(),
                        source,
                    })?;
                    Box::new(Limited::new(
                        ScriptedChat::new(script).with_system_support(self.supports_system),
                        self.max_in_flight,
                    ))
                }
                (None, Some(reply)) => Box::new(Limited::new(
                    ConstantChat::new(reply.clone()),
                    self.max_in_flight,
                )),
                (None, None) => {
                    return Err(ProfileError::Invalid {
                        name: self.name.clone(),
                        message: "mock chat profiles need `script` or `response`".into(),
                    })
                }
            },
        })
    }

    pub fn build_embedder(&self) -> Result<Box<dyn EmbeddingBackend>, ProfileError> {
        self.expect_kind(BackendKind::Embedding)?;
        Ok(match (self.provider, self.embedding) {
            (Provider::Http, _) => Box::new(HttpEmbedder::new(self.clone(), self.api_key()?)),
            (Provider::Mock, MockEmbedding::Hashed) => Box::new(Limited::new(
                HashedBowEmbedder::new(self.dimension),
                self.max_in_flight,
            )),
            (Provider::Mock, MockEmbedding::ExactMatch) => Box::new(Limited::new(
                ExactMatchEmbedder::new(self.dimension),
                self.max_in_flight,
            )),
        })
    }

    pub fn build_nli(&self) -> Result<Box<dyn NliBackend>, ProfileError> {
        self.expect_kind(BackendKind::Nli)?;
        Ok(match self.provider {
            Provider::Http => Box::new(HttpNli::new(self.clone(), self.api_key()?)),
            Provider::Mock => Box::new(Limited::new(
                RuleNli::new(self.contradictions.clone()),
                self.max_in_flight,
            )),
        })
    }
}
