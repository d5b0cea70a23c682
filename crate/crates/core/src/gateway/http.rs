use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, CompletionRequest, GatewayError};

pub const API_KEY_ENV: &str = "LC_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry: usize) -> Duration {
        self.base_delay * self.factor.saturating_pow(retry as u32)
    }
}

/// Chat-completions over HTTP: `POST {base_url}/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Retryable(GatewayError),
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        HttpBackend {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
            agent,
        }
    }

    /// Reads the bearer token from `LC_API_KEY`.
    pub fn from_env(base_url: &str) -> Result<Self, GatewayError> {
        let key =
            std::env::var(API_KEY_ENV).map_err(|_| GatewayError::MissingApiKey(API_KEY_ENV))?;
        Ok(HttpBackend::new(base_url, key))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn request_body(req: &CompletionRequest) -> serde_json::Value {
        json!({
            "model": req.model_id,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "messages": req.messages.iter().map(|m| json!({
                "role": m.role.as_str(),
                "content": m.content,
            })).collect::<Vec<_>>(),
        })
    }

    fn attempt(&self, body: &serde_json::Value, attempts: usize) -> Attempt {
        let response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let mut response = match response {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retryable(GatewayError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retryable(GatewayError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            }
        };
        if !(200..300).contains(&status) {
            let err = GatewayError::HttpStatus {
                status,
                attempts,
                body: text.chars().take(512).collect(),
            };
            return if status == 429 || status >= 500 {
                Attempt::Retryable(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        let parsed: ChatResponse = match serde_json::from_str(&text) {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(GatewayError::MalformedResponse(e.to_string())),
        };
        match parsed.choices.into_iter().next() {
            None => Attempt::Fatal(GatewayError::MalformedResponse("no choices".into())),
            Some(choice) => match choice.message.content {
                Some(c) if !c.trim().is_empty() => Attempt::Done(c),
                _ => Attempt::Fatal(GatewayError::EmptyContent),
            },
        }
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let body = Self::request_body(req);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body, attempts) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retryable(e) => {
                    if attempts > self.retry.max_retries {
                        return Err(e);
                    }
                    let delay = self.retry.delay_before_retry(attempts - 1);
                    log::warn!("attempt {attempts} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
