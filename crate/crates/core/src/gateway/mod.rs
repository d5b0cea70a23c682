//! Chat-completion gateway.
//!
//! Every model call in the pipeline goes through [`Gateway::complete`]. The
//! backend behind it is one of:
//!
//! - [`HttpBackend`]: a chat-completions endpoint with bounded retries,
//! - [`MockBackend`]: fixtures keyed by request digest or content rule,
//! - [`ReplayBackend`] / [`RecordingBackend`]: cassette files keyed by digest.
//!
//! Requests are identified by [`canonical_digest`], a SHA-256 over a fixed
//! byte layout, so cassettes recorded on one machine replay on another.

mod cassette;
mod http;
mod mock;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cassette::{Cassette, CassetteStore, RecordingBackend, ReplayBackend};
pub use http::{HttpBackend, RetryPolicy, API_KEY_ENV};
pub use mock::{MockBackend, MockFixtures, MockRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    pub messages: Vec<ChatMessage>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if let Some(i) = self
            .messages
            .iter()
            .position(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(GatewayError::InvalidRequest(format!(
                "message {i} has empty {} content",
                self.messages[i].role
            )));
        }
        Ok(())
    }

    /// Bytes hashed by [`canonical_digest`]:
    /// `model_id \n temperature(%.6f) \n` then `role \n content \n` per message.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        out.push_str(&self.model_id);
        out.push('\n');
        out.push_str(&format!("{:.6}", self.temperature));
        out.push('\n');
        for m in &self.messages {
            out.push_str(m.role.as_str());
            out.push('\n');
            out.push_str(&m.content);
            out.push('\n');
        }
        out.into_bytes()
    }
}

/// Lowercase hex SHA-256 of [`CompletionRequest::canonical_bytes`].
pub fn canonical_digest(req: &CompletionRequest) -> String {
    hex::encode(Sha256::digest(req.canonical_bytes()))
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },

    #[error("HTTP status {status} after {attempts} attempts: {body}")]
    HttpStatus {
        status: u16,
        attempts: usize,
        body: String,
    },

    #[error("malformed response: {0}")]
    MalformedResponse(String),

    #[error("model returned empty content")]
    EmptyContent,

    #[error("no cassette for request digest {digest}")]
    MissingCassette { digest: String },

    #[error("no mock fixture for request digest {digest}")]
    NoFixture { digest: String },

    #[error("missing API key: set {0}")]
    MissingApiKey(&'static str),

    #[error("cassette store {path}: {message}")]
    Store { path: String, message: String },
}

/// One chat-completion provider.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        (**self).complete(req)
    }
}

/// A completed exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub digest: String,
    pub text: String,
}

/// Backend plus per-call defaults. Cheap to clone and safe to share.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    temperature: f64,
    max_tokens: Option<u32>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("temperature", &self.temperature)
            .field("max_tokens", &self.max_tokens)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Gateway {
            backend: Arc::new(backend),
            temperature: 0.0,
            max_tokens: None,
        }
    }

    pub fn from_arc(backend: Arc<dyn Backend>) -> Self {
        Gateway {
            backend,
            temperature: 0.0,
            max_tokens: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: Option<u32>) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn request(&self, model_id: &str, messages: Vec<ChatMessage>) -> CompletionRequest {
        CompletionRequest {
            model_id: model_id.to_string(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            messages,
        }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let text = self.backend.complete(req)?;
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyContent);
        }
        Ok(text)
    }

    pub fn chat(&self, model_id: &str, messages: Vec<ChatMessage>) -> Result<Reply, GatewayError> {
        let req = self.request(model_id, messages);
        let text = self.complete(&req)?;
        Ok(Reply {
            digest: canonical_digest(&req),
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(messages: Vec<ChatMessage>) -> CompletionRequest {
        CompletionRequest {
            model_id: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_tokens: None,
            messages,
        }
    }

    #[test]
    fn canonical_bytes_layout() {
        let r = req(vec![ChatMessage::user("hello")]);
        assert_eq!(
            String::from_utf8(r.canonical_bytes()).unwrap(),
            "gpt-3.5-turbo\n0.000000\nuser\nhello\n"
        );
    }

    // Golden value computed with `printf 'gpt-3.5-turbo\n0.000000\nuser\nhello\n' | sha256sum`.
    #[test]
    fn digest_reference_vector() {
        let r = req(vec![ChatMessage::user("hello")]);
        assert_eq!(
            canonical_digest(&r),
            "830130e0bcb6a136bb1fea62915f8c5c63638488558936c4be3486915fa2f7fb"
        );
    }

    #[test]
    fn digest_is_deterministic_and_order_sensitive() {
        let a = req(vec![ChatMessage::system("s"), ChatMessage::user("u")]);
        let b = a.clone();
        assert_eq!(canonical_digest(&a), canonical_digest(&b));
        let swapped = req(vec![ChatMessage::user("u"), ChatMessage::system("s")]);
        assert_ne!(canonical_digest(&a), canonical_digest(&swapped));
        let warmer = CompletionRequest {
            temperature: 0.7,
            ..a.clone()
        };
        assert_ne!(canonical_digest(&a), canonical_digest(&warmer));
    }

    #[test]
    fn request_validation() {
        assert!(req(vec![]).validate().is_err());
        assert!(req(vec![ChatMessage::user("  ")]).validate().is_err());
        assert!(
            req(vec![ChatMessage::user("x"), ChatMessage::assistant("")])
                .validate()
                .is_ok()
        );
        let mut r = req(vec![ChatMessage::user("x")]);
        r.temperature = -1.0;
        assert!(r.validate().is_err());
    }

    struct Echo;
    impl Backend for Echo {
        fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
            Ok(req.messages.last().unwrap().content.clone())
        }
    }

    #[test]
    fn gateway_rejects_empty_content() {
        let gw = Gateway::new(Echo);
        let err = gw
            .chat(
                "m",
                vec![ChatMessage::user("x"), ChatMessage::assistant(" ")],
            )
            .unwrap_err();
        assert!(matches!(err, GatewayError::EmptyContent));
        let reply = gw.chat("m", vec![ChatMessage::user("ping")]).unwrap();
        assert_eq!(reply.text, "ping");
        assert_eq!(reply.digest.len(), 64);
    }
}
