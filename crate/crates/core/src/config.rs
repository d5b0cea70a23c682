//! Pipeline configuration.
//!
//! Values come from three layers: a TOML file, the environment (`LC_API_KEY`
//! only), and explicit overrides (command-line flags). Later layers win.
//!
//! ```toml
//! backend = "replay"
//! cassette_dir = "cassettes"
//! refine_rounds = 2
//! top_k = 75
//!
//! [models]
//! extraction = "gpt-3.5-turbo"
//! instruction = "llama-2-7b-instruct-ft"
//! code = "gpt-3.5-turbo"
//!
//! [sandbox]
//! interpreter_command = ["python3"]
//! timeout_seconds = 600
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_TOP_K;
use crate::engine::DEFAULT_REFINE_ROUNDS;
use crate::error::{Error, Result};
use crate::gateway::{
    Backend, CassetteStore, HttpBackend, MockBackend, RecordingBackend, ReplayBackend, API_KEY_ENV,
};
use crate::sandbox::SandboxConfig;
use crate::synth::REPAIR_LIMIT;
use crate::template::TemplateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
    Record,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http" => Ok(BackendKind::Http),
            "mock" => Ok(BackendKind::Mock),
            "replay" => Ok(BackendKind::Replay),
            "record" => Ok(BackendKind::Record),
            other => Err(Error::Config(format!(
                "unknown backend `{other}` (expected http, mock, replay or record)"
            ))),
        }
    }
}

/// What a `record` backend forwards to before saving cassettes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIds {
    /// Extraction and refinement.
    pub extraction: String,
    /// Rank-conditioned instruction inference.
    pub instruction: String,
    /// Stage synthesis, integration and repair.
    pub code: String,
}

impl Default for ModelIds {
    fn default() -> Self {
        ModelIds {
            extraction: "gpt-3.5-turbo".into(),
            instruction: "llama-2-7b-instruct-ft".into(),
            code: "gpt-3.5-turbo".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub backend: BackendKind,
    pub record_source: RecordSource,
    pub base_url: String,
    pub api_key: Option<String>,
    pub models: ModelIds,
    pub temperature: f64,
    pub cassette_dir: Option<PathBuf>,
    pub mock_fixtures: Option<PathBuf>,
    pub template_dir: Option<PathBuf>,
    pub sandbox: SandboxConfig,
    pub repair_limit: u32,
    pub refine_rounds: u32,
    pub top_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            backend: BackendKind::Http,
            record_source: RecordSource::Http,
            base_url: "https://api.openai.com/v1".into(),
            api_key: None,
            models: ModelIds::default(),
            temperature: 0.0,
            cassette_dir: None,
            mock_fixtures: None,
            template_dir: None,
            sandbox: SandboxConfig::default(),
            repair_limit: REPAIR_LIMIT,
            refine_rounds: DEFAULT_REFINE_ROUNDS,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<BackendKind>,
    record_source: Option<RecordSource>,
    base_url: Option<String>,
    api_key: Option<String>,
    temperature: Option<f64>,
    cassette_dir: Option<PathBuf>,
    mock_fixtures: Option<PathBuf>,
    template_dir: Option<PathBuf>,
    repair_limit: Option<u32>,
    refine_rounds: Option<u32>,
    top_k: Option<usize>,
    models: Option<FileModels>,
    sandbox: Option<FileSandbox>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileModels {
    extraction: Option<String>,
    instruction: Option<String>,
    code: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSandbox {
    interpreter_command: Option<Vec<String>>,
    solution_extension: Option<String>,
    submission_filename: Option<String>,
    timeout_seconds: Option<f64>,
    stream_tail_bytes: Option<usize>,
    env_whitelist: Option<Vec<String>>,
}

/// Flag-level overrides; `None` leaves the lower layer in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend: Option<BackendKind>,
    pub base_url: Option<String>,
    pub cassette_dir: Option<PathBuf>,
    pub mock_fixtures: Option<PathBuf>,
    pub template_dir: Option<PathBuf>,
    pub interpreter_command: Option<Vec<String>>,
    pub timeout_seconds: Option<f64>,
    pub refine_rounds: Option<u32>,
    pub top_k: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Parses TOML. Relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = PipelineConfig::default();
        set(&mut c.backend, file.backend);
        set(&mut c.record_source, file.record_source);
        set(&mut c.base_url, file.base_url);
        c.api_key = file.api_key.or(c.api_key);
        set(&mut c.temperature, file.temperature);
        c.cassette_dir = file.cassette_dir.map(|p| resolve(base_dir, p));
        c.mock_fixtures = file.mock_fixtures.map(|p| resolve(base_dir, p));
        c.template_dir = file.template_dir.map(|p| resolve(base_dir, p));
        set(&mut c.repair_limit, file.repair_limit);
        set(&mut c.refine_rounds, file.refine_rounds);
        set(&mut c.top_k, file.top_k);
        if let Some(m) = file.models {
            set(&mut c.models.extraction, m.extraction);
            set(&mut c.models.instruction, m.instruction);
            set(&mut c.models.code, m.code);
        }
        if let Some(s) = file.sandbox {
            set(&mut c.sandbox.interpreter_command, s.interpreter_command);
            set(&mut c.sandbox.solution_extension, s.solution_extension);
            set(&mut c.sandbox.submission_filename, s.submission_filename);
            if let Some(t) = s.timeout_seconds {
                c.sandbox.timeout = seconds(t)?;
            }
            set(&mut c.sandbox.stream_tail_bytes, s.stream_tail_bytes);
            c.sandbox.env_whitelist = s.env_whitelist;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies the environment layer through `lookup` (normally `std::env::var`).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(key) = lookup(API_KEY_ENV).filter(|k| !k.is_empty()) {
            self.api_key = Some(key);
        }
    }

    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        set(&mut self.backend, o.backend);
        set(&mut self.base_url, o.base_url.clone());
        self.cassette_dir = o.cassette_dir.clone().or(self.cassette_dir.take());
        self.mock_fixtures = o.mock_fixtures.clone().or(self.mock_fixtures.take());
        self.template_dir = o.template_dir.clone().or(self.template_dir.take());
        set(
            &mut self.sandbox.interpreter_command,
            o.interpreter_command.clone(),
        );
        if let Some(t) = o.timeout_seconds {
            self.sandbox.timeout = seconds(t)?;
        }
        set(&mut self.refine_rounds, o.refine_rounds);
        set(&mut self.top_k, o.top_k);
        Ok(())
    }

    /// File (optional) → environment → overrides, then validation of
    /// everything except the backend.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply_env(|k| std::env::var(k).ok());
        c.apply_overrides(overrides)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repair_limit != REPAIR_LIMIT {
            return bad(format!(
                "repair_limit is fixed at {REPAIR_LIMIT}, got {}",
                self.repair_limit
            ));
        }
        if self.top_k < 1 {
            return bad("top_k must be at least 1".into());
        }
        if self.refine_rounds < 1 {
            return bad("refine_rounds must be at least 1".into());
        }
        if self.sandbox.interpreter_command.is_empty() {
            return bad("sandbox.interpreter_command must not be empty".into());
        }
        if self.sandbox.stream_tail_bytes == 0 {
            return bad("sandbox.stream_tail_bytes must be positive".into());
        }
        if self.sandbox.submission_filename.trim().is_empty() {
            return bad("sandbox.submission_filename must not be empty".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        Ok(())
    }

    /// Checks that the selected backend has what it needs. Only commands that
    /// talk to a model call this (through [`Self::build_backend`]).
    pub fn validate_backend(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let needs_http = self.backend == BackendKind::Http
            || (self.backend == BackendKind::Record && self.record_source == RecordSource::Http);
        let needs_mock = self.backend == BackendKind::Mock
            || (self.backend == BackendKind::Record && self.record_source == RecordSource::Mock);
        if needs_http && self.api_key.is_none() {
            return bad(format!(
                "the http backend needs an API key (set {API_KEY_ENV})"
            ));
        }
        if needs_mock && self.mock_fixtures.is_none() {
            return bad("the mock backend needs a fixtures file".into());
        }
        if matches!(self.backend, BackendKind::Replay | BackendKind::Record)
            && self.cassette_dir.is_none()
        {
            return bad("replay and record backends need a cassette directory".into());
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.template_dir {
            Some(dir) => TemplateSet::load_dir(dir),
            None => Ok(TemplateSet::builtin()),
        }
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>> {
        self.validate_backend()?;
        let http = || -> Result<HttpBackend> {
            let key = self
                .api_key
                .clone()
                .ok_or_else(|| Error::Config(format!("missing API key ({API_KEY_ENV})")))?;
            Ok(HttpBackend::new(&self.base_url, key))
        };
        let mock = || -> Result<MockBackend> {
            let path = self
                .mock_fixtures
                .as_deref()
                .ok_or_else(|| Error::Config("missing mock fixtures path".into()))?;
            MockBackend::load(path).map_err(|e| Error::Config(e.to_string()))
        };
        let store = || -> Result<CassetteStore> {
            self.cassette_dir
                .clone()
                .map(CassetteStore::new)
                .ok_or_else(|| Error::Config("missing cassette directory".into()))
        };
        Ok(match (self.backend, self.record_source) {
            (BackendKind::Http, _) => Arc::new(http()?),
            (BackendKind::Mock, _) => Arc::new(mock()?),
            (BackendKind::Replay, _) => Arc::new(ReplayBackend::new(store()?)),
            (BackendKind::Record, RecordSource::Http) => {
                Arc::new(RecordingBackend::new(http()?, store()?))
            }
            (BackendKind::Record, RecordSource::Mock) => {
                Arc::new(RecordingBackend::new(mock()?, store()?))
            }
        })
    }
}

fn seconds(t: f64) -> Result<Duration> {
    if t.is_finite() && t > 0.0 {
        Ok(Duration::from_secs_f64(t))
    } else {
        Err(Error::Config(format!(
            "timeout_seconds must be positive, got {t}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#"
backend = "replay"
cassette_dir = "tapes"
api_key = "from-file"
top_k = 10

[models]
code = "code-model"

[sandbox]
interpreter_command = ["sh"]
timeout_seconds = 2.5
"#;

    #[test]
    fn toml_layer() {
        let c = PipelineConfig::from_toml(FILE, Path::new("/cfg")).unwrap();
        assert_eq!(c.backend, BackendKind::Replay);
        assert_eq!(c.cassette_dir.as_deref(), Some(Path::new("/cfg/tapes")));
        assert_eq!(c.models.code, "code-model");
        assert_eq!(c.models.extraction, "gpt-3.5-turbo");
        assert_eq!(c.sandbox.timeout, Duration::from_millis(2500));
        assert_eq!(c.top_k, 10);
        c.validate().unwrap();
    }

    #[test]
    fn precedence_flags_env_file() {
        let mut c = PipelineConfig::from_toml(FILE, Path::new("/cfg")).unwrap();
        c.apply_env(|k| (k == API_KEY_ENV).then(|| "from-env".to_string()));
        assert_eq!(c.api_key.as_deref(), Some("from-env"));
        c.apply_overrides(&Overrides {
            top_k: Some(3),
            cassette_dir: Some("/flag".into()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.top_k, 3);
        assert_eq!(c.cassette_dir.as_deref(), Some(Path::new("/flag")));
        assert_eq!(c.backend, BackendKind::Replay);
    }

    #[test]
    fn repair_limit_is_fixed() {
        let c = PipelineConfig::from_toml(
            "backend = \"replay\"\ncassette_dir = \"x\"\nrepair_limit = 5\n",
            Path::new("."),
        )
        .unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("repair_limit")));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(PipelineConfig::from_toml(
            "top_k = 0\nbackend = \"replay\"\ncassette_dir = \"x\"",
            Path::new(".")
        )
        .unwrap()
        .validate()
        .is_err());
        assert!(PipelineConfig::from_toml("unknown_key = 1", Path::new(".")).is_err());
        assert!(
            PipelineConfig::from_toml("[sandbox]\ntimeout_seconds = 0", Path::new(".")).is_err()
        );
        let http = PipelineConfig::default();
        http.validate().unwrap();
        assert!(http.validate_backend().is_err(), "http without a key");
        assert!(http.build_backend().is_err());
    }
}
