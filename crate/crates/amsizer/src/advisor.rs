//! Pluggable reasoning backends. Requests are JSON documents of the form
//! `{system, context: {hierarchy_json, focus_items, ...}, task,
//! response_schema, purpose, round}`; responses must parse against the
//! declared shape, with one automatic repair retry quoting the validation
//! error before the caller gives up.
//!
//! Three implementations: an OpenAI-compatible chat-completions client, a
//! deterministic scripted stub replaying fixture files, and a recorder that
//! wraps the HTTP client to produce stub fixtures.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdvisorError {
    #[error("advisor unavailable: {0}")]
    Unavailable(String),
    #[error("round {round}: malformed advisor response: {detail}")]
    Malformed { round: u32, detail: String },
    #[error("advisor fixture: {0}")]
    Fixture(String),
    #[error("advisor transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct RequestContext {
    pub hierarchy_json: Value,
    pub focus_items: Vec<String>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub extra: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdvisorRequest {
    pub system: String,
    pub context: RequestContext,
    pub task: String,
    pub response_schema: Value,
    pub purpose: String,
    pub round: u32,
}

impl AdvisorRequest {
    pub fn new(purpose: &str, round: u32, task: &str) -> AdvisorRequest {
        AdvisorRequest {
            system: "You are an analog circuit design assistant. Answer with a single JSON \
                     object matching the response schema exactly."
                .into(),
            context: RequestContext {
                hierarchy_json: Value::Null,
                focus_items: Vec::new(),
                extra: Value::Null,
            },
            task: task.into(),
            response_schema: Value::Null,
            purpose: purpose.into(),
            round,
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("request serializes")
    }
}

pub trait Advisor: Send + Sync {
    fn name(&self) -> &str;
    fn respond(&self, request: &AdvisorRequest) -> Result<Value, AdvisorError>;
}

/// Ordered, replayable log of advisor exchanges. The entry count is the
/// advisor-call count reported in run summaries.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub round: u32,
    pub purpose: String,
    pub request: Value,
    pub response: Value,
}

impl Transcript {
    pub fn record(&mut self, request: &AdvisorRequest, response: &Value) {
        self.entries.push(TranscriptEntry {
            round: request.round,
            purpose: request.purpose.clone(),
            request: request.to_json(),
            response: response.clone(),
        });
    }

    pub fn call_count(&self) -> usize {
        self.entries.len()
    }
}

/// One advisor call with schema-repair retries; the repair request quotes
/// the validation error. Every attempt is recorded in the transcript.
pub fn call_with_repair<T>(
    advisor: &dyn Advisor,
    request: &AdvisorRequest,
    retries: u32,
    transcript: &mut Transcript,
    mut parse: impl FnMut(&Value) -> Result<T, AdvisorError>,
) -> Result<T, AdvisorError> {
    let mut request = request.clone();
    let mut last_err = None;
    for attempt in 0..=retries {
        let response = advisor.respond(&request)?;
        transcript.record(&request, &response);
        match parse(&response) {
            Ok(value) => return Ok(value),
            Err(err) => {
                if attempt == retries {
                    return Err(err);
                }
                request = AdvisorRequest {
                    purpose: "repair".into(),
                    task: format!(
                        "Your previous response failed validation: {err}. \
                         Re-emit a JSON object matching the response schema."
                    ),
                    ..request.clone()
                };
                last_err = Some(err);
            }
        }
    }
    Err(last_err.unwrap_or_else(|| AdvisorError::Unavailable("no attempts".into())))
}

// ---------------------------------------------------------------------------
// Scripted stub

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureMatcher {
    pub purpose: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_contains: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(rename = "match")]
    pub matcher: FixtureMatcher,
    pub response: Value,
    /// Maximum times this entry may fire; omitted = unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uses: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureFile {
    pub version: u32,
    pub entries: Vec<FixtureEntry>,
}

/// Deterministic advisor replaying request-matcher -> response pairs.
pub struct ScriptedAdvisor {
    label: String,
    entries: Vec<FixtureEntry>,
    remaining: Mutex<Vec<Option<u32>>>,
}

impl ScriptedAdvisor {
    pub fn from_json(label: &str, json: &str) -> Result<ScriptedAdvisor, AdvisorError> {
        let file: FixtureFile =
            serde_json::from_str(json).map_err(|e| AdvisorError::Fixture(e.to_string()))?;
        if file.version != 1 {
            return Err(AdvisorError::Fixture(format!(
                "unsupported fixture version {}",
                file.version
            )));
        }
        let remaining = file.entries.iter().map(|e| e.uses).collect();
        Ok(ScriptedAdvisor {
            label: label.to_string(),
            entries: file.entries,
            remaining: Mutex::new(remaining),
        })
    }

    pub fn from_path(path: &Path) -> Result<ScriptedAdvisor, AdvisorError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            AdvisorError::Fixture(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&path.display().to_string(), &text)
    }
}

impl Advisor for ScriptedAdvisor {
    fn name(&self) -> &str {
        &self.label
    }

    fn respond(&self, request: &AdvisorRequest) -> Result<Value, AdvisorError> {
        let request_text = request.to_json().to_string();
        let mut remaining = self.remaining.lock().expect("fixture lock");
        for (idx, entry) in self.entries.iter().enumerate() {
            let m = &entry.matcher;
            if m.purpose != request.purpose {
                continue;
            }
            if let Some(round) = m.round {
                if round != request.round {
                    continue;
                }
            }
            if let Some(needle) = &m.request_contains {
                if !request_text.contains(needle.as_str()) {
                    continue;
                }
            }
            match &mut remaining[idx] {
                Some(0) => continue,
                Some(n) => *n -= 1,
                None => {}
            }
            return Ok(entry.response.clone());
        }
        Err(AdvisorError::Unavailable(format!(
            "no fixture entry matches purpose `{}` round {}",
            request.purpose, request.round
        )))
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP client

pub struct HttpAdvisor {
    base_url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

pub const API_KEY_ENV: &str = "AMSIZER_API_KEY";

impl HttpAdvisor {
    pub fn new(base_url: &str, model: &str, temperature: f64) -> HttpAdvisor {
        let api_key = std::env::var(API_KEY_ENV)
            .or_else(|_| std::env::var("OPENAI_API_KEY"))
            .ok();
        HttpAdvisor {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            temperature,
            api_key,
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(120))
                .build()
                .expect("http client"),
        }
    }
}

/// Strip Markdown code fences around a JSON payload.
fn strip_fences(content: &str) -> &str {
    let trimmed = content.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.trim_start_matches(['\r', '\n'])
        .strip_suffix("```")
        .map(str::trim)
        .unwrap_or(trimmed)
}

impl Advisor for HttpAdvisor {
    fn name(&self) -> &str {
        "http"
    }

    fn respond(&self, request: &AdvisorRequest) -> Result<Value, AdvisorError> {
        let body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.to_json().to_string()},
            ],
        });
        let url = format!("{}/chat/completions", self.base_url);
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| AdvisorError::Unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(AdvisorError::Transport(format!(
                "{url} returned {}",
                resp.status()
            )));
        }
        let payload: Value = resp
            .json()
            .map_err(|e| AdvisorError::Transport(e.to_string()))?;
        let content = payload["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| AdvisorError::Transport("missing message content".into()))?;
        serde_json::from_str(strip_fences(content)).map_err(|e| AdvisorError::Malformed {
            round: request.round,
            detail: format!("response is not JSON: {e}"),
        })
    }
}

// ---------------------------------------------------------------------------
// Recorder

/// Wraps another advisor and writes a scripted-stub fixture of everything
/// that passed through. Flush explicitly (or on drop).
pub struct RecordingAdvisor<A: Advisor> {
    inner: A,
    path: std::path::PathBuf,
    recorded: Mutex<Vec<FixtureEntry>>,
}

impl<A: Advisor> RecordingAdvisor<A> {
    pub fn new(inner: A, path: impl Into<std::path::PathBuf>) -> Self {
        RecordingAdvisor {
            inner,
            path: path.into(),
            recorded: Mutex::new(Vec::new()),
        }
    }

    pub fn flush(&self) -> std::io::Result<()> {
        let entries = self.recorded.lock().expect("recorder lock").clone();
        let file = FixtureFile { version: 1, entries };
        std::fs::write(&self.path, serde_json::to_string_pretty(&file).unwrap())
    }
}

impl<A: Advisor> Drop for RecordingAdvisor<A> {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

impl<A: Advisor> Advisor for RecordingAdvisor<A> {
    fn name(&self) -> &str {
        "recorder"
    }

    fn respond(&self, request: &AdvisorRequest) -> Result<Value, AdvisorError> {
        let response = self.inner.respond(request)?;
        self.recorded.lock().expect("recorder lock").push(FixtureEntry {
            matcher: FixtureMatcher {
                purpose: request.purpose.clone(),
                round: Some(request.round),
                request_contains: None,
            },
            response: response.clone(),
            uses: Some(1),
        });
        Ok(response)
    }
}
