use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{canonical_digest, Backend, CompletionRequest, GatewayError};

/// One recorded exchange, stored as `<key>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub key: String,
    pub request_snapshot: CompletionRequest,
    pub response: String,
}

impl Cassette {
    pub fn new(request: CompletionRequest, response: String) -> Self {
        Cassette {
            key: canonical_digest(&request),
            request_snapshot: request,
            response,
        }
    }
}

/// Directory of cassette files.
#[derive(Debug, Clone)]
pub struct CassetteStore {
    dir: PathBuf,
}

impl CassetteStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CassetteStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    fn err(&self, path: &Path, message: impl ToString) -> GatewayError {
        GatewayError::Store {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }

    pub fn load(&self, digest: &str) -> Result<Cassette, GatewayError> {
        let path = self.path_for(digest);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(GatewayError::MissingCassette {
                    digest: digest.to_string(),
                })
            }
            Err(e) => return Err(self.err(&path, e)),
        };
        let cassette: Cassette = serde_json::from_str(&text).map_err(|e| self.err(&path, e))?;
        if cassette.key != digest || canonical_digest(&cassette.request_snapshot) != digest {
            return Err(self.err(&path, "cassette key does not match its request snapshot"));
        }
        Ok(cassette)
    }

    /// Writes to a temporary file in the store then renames it into place.
    pub fn save(&self, cassette: &Cassette) -> Result<PathBuf, GatewayError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| self.err(&self.dir, e))?;
        let path = self.path_for(&cassette.key);
        let mut tmp =
            tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| self.err(&self.dir, e))?;
        let body = serde_json::to_string_pretty(cassette).map_err(|e| self.err(&path, e))?;
        tmp.write_all(body.as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .map_err(|e| self.err(&path, e))?;
        tmp.persist(&path).map_err(|e| self.err(&path, e.error))?;
        Ok(path)
    }

    /// All cassettes in the store, sorted by key.
    pub fn list(&self) -> Result<Vec<Cassette>, GatewayError> {
        let entries = match std::fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(self.err(&self.dir, e)),
        };
        let mut keys = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| self.err(&self.dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(key) = name.strip_suffix(".json") {
                keys.push(key.to_string());
            }
        }
        keys.sort();
        keys.iter().map(|k| self.load(k)).collect()
    }
}

/// Serves responses from a cassette store; never touches the network.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    store: CassetteStore,
}

impl ReplayBackend {
    pub fn new(store: CassetteStore) -> Self {
        ReplayBackend { store }
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        Ok(self.store.load(&canonical_digest(req))?.response)
    }
}

/// Forwards to an inner backend and persists every successful exchange.
#[derive(Debug, Clone)]
pub struct RecordingBackend<B> {
    inner: B,
    store: CassetteStore,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B, store: CassetteStore) -> Self {
        RecordingBackend { inner, store }
    }
}

impl<B: Backend> Backend for RecordingBackend<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        let response = self.inner.complete(req)?;
        self.store
            .save(&Cassette::new(req.clone(), response.clone()))?;
        Ok(response)
    }
}
