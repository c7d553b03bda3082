//! Generation backends and the persistent response cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dictionary::PhraseDictionary;
use super::paraphrase::fallback_paraphrase;
use super::templates::{parse_command, Command};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub cache_key: String,
    /// Paraphrase variant for the offline backend; not part of the wire format.
    #[serde(skip)]
    pub variant: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    #[serde(default)]
    pub backend_id: String,
}

pub trait GenerationBackend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse>;
}

/// Hex SHA-256 of prompt, slot and backend id.
pub fn cache_key(prompt: &str, slot: usize, backend_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    h.update([0x1f]);
    h.update(slot.to_le_bytes());
    h.update([0x1f]);
    h.update(backend_id.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Rule-based stand-in: dictionary rewrite for opposite commands, fixed paraphrase rules
/// for rephrase commands.
#[derive(Clone, Debug, Default)]
pub struct FallbackBackend {
    pub dictionary: PhraseDictionary,
}

impl GenerationBackend for FallbackBackend {
    fn id(&self) -> &str {
        "fallback"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse> {
        let text = match parse_command(&request.prompt) {
            Some(Command::Opposite { text, .. }) => self
                .dictionary
                .rewrite_opposite(&text)
                .map_err(|e| Error::Expansion {
                    prompt: request.prompt.clone(),
                    message: e.to_string(),
                })?,
            Some(Command::Rephrase { text }) => fallback_paraphrase(&text, request.variant),
            None => {
                return Err(Error::Expansion {
                    prompt: request.prompt.clone(),
                    message: "unrecognized command".into(),
                })
            }
        };
        Ok(GenerationResponse {
            text,
            backend_id: self.id().into(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HttpConfig {
    pub url: String,
    /// Header name and value, e.g. `("Authorization", "Bearer ...")`.
    pub auth_header: Option<(String, String)>,
    pub timeout: Duration,
    pub retries: u32,
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            auth_header: None,
            timeout: Duration::from_secs(30),
            retries: 3,
        }
    }
}

/// Posts each request as one JSON object and expects a JSON object with a `text` field.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let id = format!("http:{}", config.url);
        Self { config, agent, id }
    }

    fn attempt(
        &self,
        request: &GenerationRequest,
    ) -> std::result::Result<GenerationResponse, String> {
        let mut call = self.agent.post(&self.config.url);
        if let Some((name, value)) = &self.config.auth_header {
            call = call.set(name, value);
        }
        let response = call.send_json(request).map_err(|e| e.to_string())?;
        let mut parsed: GenerationResponse = response.into_json().map_err(|e| e.to_string())?;
        if parsed.backend_id.is_empty() {
            parsed.backend_id = self.id.clone();
        }
        Ok(parsed)
    }
}

impl GenerationBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            match self.attempt(request) {
                Ok(r) => return Ok(r),
                Err(e) => last = e,
            }
            if attempt < self.config.retries {
                std::thread::sleep(Duration::from_millis(200 << attempt.min(5)));
            }
        }
        Err(Error::Expansion {
            prompt: request.prompt.clone(),
            message: format!(
                "backend failed after {} attempts: {last}",
                self.config.retries + 1
            ),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    prompt: String,
    response: GenerationResponse,
}

/// In-memory map of responses, optionally backed by an append-only JSONL log.
#[derive(Default)]
pub struct ResponseCache {
    entries: Mutex<HashMap<String, GenerationResponse>>,
    log: Option<(PathBuf, Mutex<File>)>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing records from `path` and appends new ones to it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(rec.key, rec.response);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            entries: Mutex::new(entries),
            log: Some((path.to_path_buf(), Mutex::new(file))),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<GenerationResponse> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    /// Returns the cached response for the request key or generates and records one.
    /// When two callers race on a key, the first insert wins and both see it.
    pub fn get_or_generate(
        &self,
        request: &GenerationRequest,
        backend: &dyn GenerationBackend,
    ) -> Result<GenerationResponse> {
        if let Some(hit) = self.get(&request.cache_key) {
            return Ok(hit);
        }
        let fresh = backend.generate(request)?;
        let stored = {
            let mut entries = self.entries.lock().expect("cache lock");
            if let Some(existing) = entries.get(&request.cache_key) {
                return Ok(existing.clone());
            }
            entries.insert(request.cache_key.clone(), fresh.clone());
            fresh
        };
        if let Some((path, file)) = &self.log {
            let rec = CacheRecord {
                key: request.cache_key.clone(),
                prompt: request.prompt.clone(),
                response: stored.clone(),
            };
            let mut line = serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))?;
            line.push('\n');
            let mut f = file.lock().expect("cache log lock");
            f.write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
            f.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(stored)
    }
}
