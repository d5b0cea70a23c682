use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{canonical_digest, Backend, CompletionRequest, GatewayError};

/// Content rule: the first rule whose needle occurs in any message wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub response: String,
}

/// On-disk mock fixture file.
///
/// ```json
/// {"fixtures": {"<digest>": "text"}, "rules": [{"contains": "...", "response": "..."}], "default": "text"}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFixtures {
    #[serde(default)]
    pub fixtures: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default: Option<String>,
}

/// Deterministic scripted backend. Responses are a pure function of the
/// request: exact digest match first, then content rules, then the default.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixtures: MockFixtures,
}

impl MockBackend {
    pub fn new() -> Self {
        MockBackend::default()
    }

    pub fn from_fixtures(fixtures: MockFixtures) -> Self {
        MockBackend { fixtures }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let store_err = |message: String| GatewayError::Store {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| store_err(e.to_string()))?;
        let fixtures = serde_json::from_str(&text).map_err(|e| store_err(e.to_string()))?;
        Ok(MockBackend { fixtures })
    }

    pub fn with_fixture(mut self, digest: impl Into<String>, response: impl Into<String>) -> Self {
        self.fixtures
            .fixtures
            .insert(digest.into(), response.into());
        self
    }

    pub fn with_rule(mut self, contains: impl Into<String>, response: impl Into<String>) -> Self {
        self.fixtures.rules.push(MockRule {
            contains: contains.into(),
            response: response.into(),
        });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.fixtures.default = Some(response.into());
        self
    }
}

impl Backend for MockBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let digest = canonical_digest(req);
        if let Some(text) = self.fixtures.fixtures.get(&digest) {
            return Ok(text.clone());
        }
        let rule = self.fixtures.rules.iter().find(|rule| {
            req.messages
                .iter()
                .any(|m| m.content.contains(rule.contains.as_str()))
        });
        if let Some(rule) = rule {
            return Ok(rule.response.clone());
        }
        self.fixtures
            .default
            .clone()
            .ok_or(GatewayError::NoFixture { digest })
    }
}
