use std::collections::HashMap;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Step;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub version: String,
}

/// One question to the backend. `marking_id`, `step` and `attempt` identify
/// the call; a real model only needs the prompt and images.
#[derive(Debug, Clone)]
pub struct BackendRequest {
    pub marking_id: String,
    pub step: Step,
    pub attempt: u32,
    pub prompt: String,
    /// PNG-encoded crops.
    pub images: Vec<Vec<u8>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend timed out")]
    Timeout,
    #[error("backend refused: {0}")]
    Refusal(String),
    #[error("backend unavailable: {0}")]
    Transport(String),
}

#[async_trait]
pub trait AnnotationBackend: Send + Sync {
    fn info(&self) -> BackendInfo;
    async fn answer(&self, request: &BackendRequest) -> Result<String, BackendError>;
}

/// A transcript line: the scripted response to one (marking, step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    /// `*` matches any marking without entries of its own.
    pub marking_id: String,
    pub step: String,
    pub response: String,
}

/// Replays a scripted transcript.
///
/// Repeated entries for the same (marking, step) are served in order, one
/// per attempt, and the last one repeats. The responses `!timeout` and
/// `!refusal` inject the matching failure.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    script: HashMap<(String, String), Vec<String>>,
}

impl MockBackend {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut script: HashMap<(String, String), Vec<String>> = HashMap::new();
        for e in entries {
            script.entry((e.marking_id, e.step)).or_default().push(e.response);
        }
        Self { script }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str::<TranscriptEntry>(line)
                    .map_err(|e| format!("transcript line {}: {e}", i + 1))?,
            );
        }
        Ok(Self::new(entries))
    }

    fn lookup(&self, marking_id: &str, step: &str) -> Option<&Vec<String>> {
        self.script
            .get(&(marking_id.to_string(), step.to_string()))
            .or_else(|| self.script.get(&("*".to_string(), step.to_string())))
    }
}

#[async_trait]
impl AnnotationBackend for MockBackend {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "mock-transcript".into(),
            version: "1".into(),
        }
    }

    async fn answer(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let step = request.step.key();
        let responses = self
            .lookup(&request.marking_id, &step)
            .ok_or_else(|| BackendError::Transport(format!("no scripted response for {} {step}", request.marking_id)))?;
        let i = (request.attempt as usize).min(responses.len() - 1);
        match responses[i].as_str() {
            "!timeout" => Err(BackendError::Timeout),
            "!refusal" => Err(BackendError::Refusal("scripted refusal".into())),
            r => Ok(r.to_string()),
        }
    }
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    marking_id: &'a str,
    step: String,
    prompt: &'a str,
    /// Base64-encoded PNG crops.
    images: Vec<String>,
}

/// Posts `{marking_id, step, prompt, images}` as JSON to an endpoint that
/// answers with plain text. HTTP 451 is read as a refusal.
pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    name: String,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let url = url.into();
        Ok(Self {
            client,
            name: format!("http:{url}"),
            url,
        })
    }
}

#[async_trait]
impl AnnotationBackend for HttpBackend {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: self.name.clone(),
            version: "1".into(),
        }
    }

    async fn answer(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let body = HttpRequest {
            marking_id: &request.marking_id,
            step: request.step.key(),
            prompt: &request.prompt,
            images: request.images.iter().map(|i| b64.encode(i)).collect(),
        };
        let response = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    BackendError::Timeout
                } else {
                    BackendError::Transport(e.to_string())
                }
            })?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status.as_u16() {
            200..=299 => Ok(text),
            451 => Err(BackendError::Refusal(text)),
            408 | 504 => Err(BackendError::Timeout),
            code => Err(BackendError::Transport(format!("HTTP {code}: {text}"))),
        }
    }
}
