//! Text-generation backends.
//!
//! [`ScriptedBackend`] replays canned continuations for deterministic runs;
//! [`ChatCompletionsBackend`] talks to a chat-completions compatible server.
//! Both normalize their output through the same stop-sequence and length
//! rules so the rollout loop sees identical surface text either way.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

/// Environment variable holding the bearer token for live backends.
pub const API_KEY_ENV: &str = "RSEARCH_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub system_prompt: String,
    /// Everything after the system prompt: question plus rollout so far.
    pub transcript: String,
    pub stop_sequences: Vec<String>,
    pub temperature: f64,
    pub max_new_bytes: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    StopSequence,
    EndOfMessage,
    LengthLimit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationResult {
    /// Continuation text, including the stop sequence when one fired.
    pub text: String,
    pub finished_by: FinishReason,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("server returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("quota exceeded (retry after {retry_after:?})")]
    Quota { retry_after: Option<Duration> },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("script exhausted for episode {episode} after {calls} calls")]
    ScriptExhausted { episode: String, calls: usize },
    #[error("no script entries for episode {0}")]
    NoScript(String),
    #[error("invalid script: {0}")]
    InvalidScript(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout(_) | BackendError::Transport(_) | BackendError::Quota { .. } => {
                true
            }
            BackendError::Status { code, .. } => *code >= 500,
            _ => false,
        }
    }

    pub fn retry_after(&self) -> Option<Duration> {
        match self {
            BackendError::Quota { retry_after } => *retry_after,
            _ => None,
        }
    }
}

/// A text-generation service. Implementations must tolerate concurrent
/// `generate` calls from different episodes.
pub trait GenerationBackend: Send + Sync {
    /// Declared model-family label, used to keep the policy and the
    /// cross-family scorer apart.
    fn family(&self) -> &str;

    fn generate(
        &self,
        episode: &str,
        req: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError>;
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for &B {
    fn family(&self) -> &str {
        (**self).family()
    }

    fn generate(
        &self,
        episode: &str,
        req: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError> {
        (**self).generate(episode, req)
    }
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for Box<B> {
    fn family(&self) -> &str {
        (**self).family()
    }

    fn generate(
        &self,
        episode: &str,
        req: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError> {
        (**self).generate(episode, req)
    }
}

fn floor_char_boundary(s: &str, mut idx: usize) -> usize {
    if idx >= s.len() {
        return s.len();
    }
    while !s.is_char_boundary(idx) {
        idx -= 1;
    }
    idx
}

/// Cuts `text` at the earliest stop sequence (keeping it) and at the byte
/// budget, whichever comes first.
pub fn apply_limits(text: &str, req: &GenerationRequest) -> GenerationResult {
    let stop_end = req
        .stop_sequences
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()).map(|i| i + s.len()))
        .min();
    match stop_end {
        Some(end) if end <= req.max_new_bytes => GenerationResult {
            text: text[..end].to_owned(),
            finished_by: FinishReason::StopSequence,
        },
        _ if text.len() > req.max_new_bytes => GenerationResult {
            text: text[..floor_char_boundary(text, req.max_new_bytes)].to_owned(),
            finished_by: FinishReason::LengthLimit,
        },
        _ => GenerationResult {
            text: text.to_owned(),
            finished_by: FinishReason::EndOfMessage,
        },
    }
}

/// One line of a script fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub episode: String,
    pub step: usize,
    pub text: String,
}

/// Key under which a script applies to every episode without its own entries.
pub const ANY_EPISODE: &str = "*";

/// Replays canned continuations.
///
/// Scripts are looked up by exact episode id, then by the record id before
/// the first `#`, then under [`ANY_EPISODE`]. Each episode id gets its own
/// cursor, so concurrent episodes never steal each other's entries.
#[derive(Debug)]
pub struct ScriptedBackend {
    family: String,
    scripts: HashMap<String, Vec<String>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl ScriptedBackend {
    /// A backend that replays `script` for every episode.
    pub fn new(family: impl Into<String>, script: Vec<String>) -> Result<Self, BackendError> {
        if script.is_empty() {
            return Err(BackendError::InvalidScript("script is empty".into()));
        }
        Ok(Self {
            family: family.into(),
            scripts: HashMap::from([(ANY_EPISODE.to_owned(), script)]),
            cursors: Mutex::default(),
        })
    }

    pub fn from_entries(
        family: impl Into<String>,
        entries: Vec<ScriptEntry>,
    ) -> Result<Self, BackendError> {
        if entries.is_empty() {
            return Err(BackendError::InvalidScript("script is empty".into()));
        }
        let mut grouped: HashMap<String, Vec<(usize, String)>> = HashMap::new();
        for e in entries {
            grouped.entry(e.episode).or_default().push((e.step, e.text));
        }
        let mut scripts = HashMap::with_capacity(grouped.len());
        for (episode, mut steps) in grouped {
            steps.sort_by_key(|(step, _)| *step);
            if steps.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(BackendError::InvalidScript(format!(
                    "duplicate step for episode {episode}"
                )));
            }
            scripts.insert(episode, steps.into_iter().map(|(_, t)| t).collect());
        }
        Ok(Self {
            family: family.into(),
            scripts,
            cursors: Mutex::default(),
        })
    }

    /// Loads a JSON-lines script fixture (`episode`, `step`, `text`).
    pub fn load(family: impl Into<String>, path: &Path) -> Result<Self, BackendError> {
        let body = fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidScript(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line).map_err(|e| {
                BackendError::InvalidScript(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            entries.push(entry);
        }
        Self::from_entries(family, entries)
    }

    fn script_for(&self, episode: &str) -> Option<&Vec<String>> {
        let record = episode.split('#').next().unwrap_or(episode);
        self.scripts
            .get(episode)
            .or_else(|| self.scripts.get(record))
            .or_else(|| self.scripts.get(ANY_EPISODE))
    }
}

impl GenerationBackend for ScriptedBackend {
    fn family(&self) -> &str {
        &self.family
    }

    fn generate(
        &self,
        episode: &str,
        req: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError> {
        let script = self
            .script_for(episode)
            .ok_or_else(|| BackendError::NoScript(episode.to_owned()))?;
        let step = {
            let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
            let cursor = cursors.entry(episode.to_owned()).or_insert(0);
            let step = *cursor;
            *cursor += 1;
            step
        };
        let text = script
            .get(step)
            .ok_or_else(|| BackendError::ScriptExhausted {
                episode: episode.to_owned(),
                calls: step,
            })?;
        Ok(apply_limits(text, req))
    }
}

/// Connection settings for [`ChatCompletionsBackend`].
#[derive(Debug, Clone)]
pub struct ChatConfig {
    /// Server root; requests go to `{base_url}/v1/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub family: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl ChatConfig {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        family: impl Into<String>,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            family: family.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
    /// vLLM reports the matched stop string here.
    #[serde(default)]
    stop_reason: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Client for the chat-completions wire protocol.
pub struct ChatCompletionsBackend {
    config: ChatConfig,
    agent: ureq::Agent,
}

impl ChatCompletionsBackend {
    pub fn new(config: ChatConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn body(&self, req: &GenerationRequest) -> serde_json::Value {
        let mut messages = Vec::with_capacity(2);
        if !req.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": req.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": req.transcript}));
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_new_bytes,
        });
        if !req.stop_sequences.is_empty() {
            body["stop"] = json!(req.stop_sequences);
        }
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let mut call = self.agent.post(&self.endpoint());
        if let Some(key) = &self.config.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let response = call
            .send_json(self.body(req))
            .map_err(|e| self.map_error(e))?;
        let text = response
            .into_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
        Ok(normalize_reply(
            choice.message.content.unwrap_or_default(),
            choice.finish_reason.as_deref(),
            choice.stop_reason.as_ref().and_then(|v| v.as_str()),
            req,
        ))
    }

    fn map_error(&self, err: ureq::Error) -> BackendError {
        match err {
            ureq::Error::Status(429, resp) => BackendError::Quota {
                retry_after: resp
                    .header("Retry-After")
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs),
            },
            ureq::Error::Status(code, resp) => BackendError::Status {
                code,
                body: resp.into_string().unwrap_or_default(),
            },
            ureq::Error::Transport(t) => {
                if is_timeout(&t) {
                    BackendError::Timeout(self.config.timeout)
                } else {
                    BackendError::Transport(t.to_string())
                }
            }
        }
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    let mut source = std::error::Error::source(t);
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) {
                return true;
            }
        }
        source = err.source();
    }
    false
}

/// Servers differ on whether they echo the matched stop sequence. Re-attach
/// it so the rollout text always carries its closing tags.
fn normalize_reply(
    mut text: String,
    finish_reason: Option<&str>,
    stop_reason: Option<&str>,
    req: &GenerationRequest,
) -> GenerationResult {
    if finish_reason == Some("stop") {
        let already = req
            .stop_sequences
            .iter()
            .any(|s| !s.is_empty() && text.ends_with(s.as_str()));
        if !already {
            let matched = stop_reason
                .filter(|s| req.stop_sequences.iter().any(|stop| stop == s))
                .map(str::to_owned)
                .or_else(|| dangling_close(&text, &req.stop_sequences));
            if let Some(stop) = matched {
                text.push_str(&stop);
            }
        }
    }
    let mut result = apply_limits(&text, req);
    if finish_reason == Some("length") && result.finished_by == FinishReason::EndOfMessage {
        result.finished_by = FinishReason::LengthLimit;
    }
    result
}

/// A stop sequence of the form `</tag>` whose `<tag>` is open at the end of
/// `text`.
fn dangling_close(text: &str, stops: &[String]) -> Option<String> {
    stops.iter().find_map(|stop| {
        let name = stop.strip_prefix("</")?.strip_suffix('>')?;
        let open = format!("<{name}>");
        let last_open = text.rfind(&open)?;
        let closed_after = text[last_open..].contains(stop.as_str());
        (!closed_after).then(|| stop.clone())
    })
}

impl GenerationBackend for ChatCompletionsBackend {
    fn family(&self) -> &str {
        &self.config.family
    }

    fn generate(
        &self,
        _episode: &str,
        req: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError> {
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(req) {
                Ok(result) => return Ok(result),
                Err(err) if err.is_retryable() && attempt < self.config.max_retries => {
                    attempt += 1;
                    let wait = err
                        .retry_after()
                        .unwrap_or(backoff)
                        .min(self.config.max_backoff);
                    thread::sleep(wait);
                    backoff = (backoff * 2).min(self.config.max_backoff);
                }
                Err(err) => return Err(err),
            }
        }
    }
}
