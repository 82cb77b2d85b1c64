//! Client for OpenAI-compatible chat-completion endpoints.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{fallback_extract, parse_response_with, render_prompt, PromptTemplate};
use crate::error::{Error, Result};
use crate::event::{Claim, EventSummary, EvidenceDoc, Modality};

pub const DEFAULT_API_KEY_ENV: &str = "DACLR_API_KEY";

const REPAIR_PROMPT: &str = "Your previous reply was not a single valid JSON object with the keys \
summary, participants, attributes and structure, where structure is the summary with every \
participant and attribute replaced by [Mask]. Reply again with only that JSON object.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MllmClientConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff_secs: f64,
    pub max_concurrency: usize,
}

impl Default for MllmClientConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4o".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60.0,
            max_retries: 3,
            retry_backoff_secs: 1.0,
            max_concurrency: 4,
        }
    }
}

impl MllmClientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config("mllm.timeout_secs must be > 0".into()));
        }
        if self.max_retries > 10 {
            return Err(Error::Config("mllm.max_retries must be <= 10".into()));
        }
        if self.retry_backoff_secs < 0.0 || !self.retry_backoff_secs.is_finite() {
            return Err(Error::Config("mllm.retry_backoff_secs must be finite and >= 0".into()));
        }
        if self.max_concurrency == 0 {
            return Err(Error::Config("mllm.max_concurrency must be >= 1".into()));
        }
        Ok(())
    }
}

/// The parts of a claim or evidence record the summarizer needs.
#[derive(Debug, Clone)]
pub struct SummaryInput {
    pub id: String,
    pub text: String,
    pub modality: Modality,
    pub media_path: Option<PathBuf>,
}

impl From<&Claim> for SummaryInput {
    fn from(c: &Claim) -> Self {
        Self {
            id: c.id.clone(),
            text: c.raw_text.clone(),
            modality: Modality::Text,
            media_path: None,
        }
    }
}

impl From<&EvidenceDoc> for SummaryInput {
    fn from(d: &EvidenceDoc) -> Self {
        Self {
            id: d.id.clone(),
            text: d.raw_text.clone(),
            modality: d.modality,
            media_path: d.media_path.clone(),
        }
    }
}

fn image_part(path: &Path) -> Result<Value> {
    let bytes = fs::read(path)?;
    let mime = match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/png",
    };
    let data = base64::engine::general_purpose::STANDARD.encode(bytes);
    Ok(json!({
        "type": "image_url",
        "image_url": { "url": format!("data:{mime};base64,{data}") }
    }))
}

pub fn build_request_body(cfg: &MllmClientConfig, messages: &[Value]) -> Value {
    json!({
        "model": cfg.model_name,
        "messages": messages,
        "temperature": 0,
    })
}

struct Client<'a> {
    cfg: &'a MllmClientConfig,
    http: reqwest::blocking::Client,
    api_key: String,
}

impl<'a> Client<'a> {
    fn new(cfg: &'a MllmClientConfig) -> Result<Self> {
        cfg.validate()?;
        let api_key =
            std::env::var(&cfg.api_key_env).map_err(|_| Error::MissingApiKey(cfg.api_key_env.clone()))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { cfg, http, api_key })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }

    /// Sends one chat request, retrying transport failures, 429 and 5xx.
    fn complete(&self, messages: &[Value]) -> Result<String> {
        let body = build_request_body(self.cfg, messages);
        let mut attempt = 0u32;
        loop {
            let outcome = self
                .http
                .post(self.url())
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            let (retryable, hint, err) = match outcome {
                Ok(resp) if resp.status().is_success() => {
                    let v: Value = resp.json().map_err(|e| Error::Transport(e.to_string()))?;
                    return v["choices"][0]["message"]["content"]
                        .as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| Error::Transport("response has no message content".into()));
                }
                Ok(resp) => {
                    let status = resp.status();
                    let hint = resp
                        .headers()
                        .get(reqwest::header::RETRY_AFTER)
                        .and_then(|h| h.to_str().ok())
                        .and_then(|s| s.trim().parse::<f64>().ok());
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    (retryable, hint, format!("HTTP {status}"))
                }
                Err(e) => (true, None, e.to_string()),
            };
            if !retryable || attempt >= self.cfg.max_retries {
                return Err(Error::Transport(format!("{err} after {} attempt(s)", attempt + 1)));
            }
            let backoff = self.cfg.retry_backoff_secs * 2f64.powi(attempt as i32);
            let wait = hint.map_or(backoff, |h| h.max(backoff));
            warn!(attempt, wait, "{err}; retrying");
            std::thread::sleep(Duration::from_secs_f64(wait));
            attempt += 1;
        }
    }

    fn summarize(&self, template: &PromptTemplate, doc: &SummaryInput) -> Result<EventSummary> {
        let prompt = render_prompt(template, &doc.text, &doc.modality.to_string())?;
        let mut content = vec![json!({ "type": "text", "text": prompt })];
        if doc.modality == Modality::Image {
            let path = doc
                .media_path
                .as_deref()
                .ok_or_else(|| Error::SummaryQuality(format!("image {} has no media path", doc.id)))?;
            content.push(image_part(path)?);
        }
        let mut messages = vec![json!({ "role": "user", "content": content })];

        let reply = self.complete(&messages)?;
        match parse_response_with(&reply, true) {
            Ok(s) => Ok(s),
            Err(first) => {
                debug!(id = %doc.id, "malformed summary ({first}); sending repair prompt");
                messages.push(json!({ "role": "assistant", "content": reply }));
                messages.push(json!({ "role": "user", "content": REPAIR_PROMPT }));
                let reply = self.complete(&messages)?;
                parse_response_with(&reply, true).map_err(|e| match e {
                    Error::Parse => Error::SummaryQuality("no JSON object after repair prompt".into()),
                    other => other,
                })
            }
        }
    }
}

/// Requests an event summary from the configured endpoint.
///
/// Malformed replies get one repair re-prompt; the returned summary always
/// passes [`crate::event::validate_summary`].
pub fn request_summary(
    cfg: &MllmClientConfig,
    template: &PromptTemplate,
    doc: &SummaryInput,
) -> Result<EventSummary> {
    Client::new(cfg)?.summarize(template, doc)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    #[serde(flatten)]
    pub summary: EventSummary,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct BatchReport {
    pub written: usize,
    pub skipped: usize,
    pub fallback: usize,
    pub failed: Vec<String>,
}

/// How summaries are produced in batch mode.
pub enum Summarizer<'a> {
    Remote {
        cfg: &'a MllmClientConfig,
        template: &'a PromptTemplate,
        /// Route remote failures to [`fallback_extract`] instead of recording them.
        fallback_on_error: bool,
    },
    Offline,
}

pub fn read_summary_ids(path: &Path) -> Result<HashSet<String>> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let rec: SummaryRecord = serde_json::from_str(l)?;
            Ok(rec.id)
        })
        .collect()
}

/// Summarizes every input whose id is not yet in `out_path`, appending
/// records in input order. Existing records are left untouched.
pub fn summarize_batch(summarizer: &Summarizer<'_>, inputs: &[SummaryInput], out_path: &Path) -> Result<BatchReport> {
    let done = read_summary_ids(out_path)?;
    let todo: Vec<&SummaryInput> = inputs.iter().filter(|d| !done.contains(&d.id)).collect();
    let mut report = BatchReport {
        skipped: inputs.len() - todo.len(),
        ..Default::default()
    };

    let results: Vec<Mutex<Option<(Result<EventSummary>, bool)>>> = todo.iter().map(|_| Mutex::new(None)).collect();
    match summarizer {
        Summarizer::Offline => {
            for (slot, doc) in results.iter().zip(&todo) {
                *slot.lock().unwrap() = Some((fallback_extract(&doc.text), true));
            }
        }
        Summarizer::Remote {
            cfg,
            template,
            fallback_on_error,
        } => {
            let client = Client::new(cfg)?;
            let next = AtomicUsize::new(0);
            std::thread::scope(|scope| {
                for _ in 0..cfg.max_concurrency.min(todo.len().max(1)) {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(doc) = todo.get(i) else { break };
                        let out = match client.summarize(template, doc) {
                            Ok(s) => (Ok(s), false),
                            Err(e) if *fallback_on_error => {
                                warn!(id = %doc.id, "remote summary failed ({e}); using fallback");
                                (fallback_extract(&doc.text), true)
                            }
                            Err(e) => (Err(e), false),
                        };
                        *results[i].lock().unwrap() = Some(out);
                    });
                }
            });
        }
    }

    let mut lines = String::new();
    for (doc, slot) in todo.iter().zip(results) {
        match slot.into_inner().unwrap() {
            Some((Ok(summary), used_fallback)) => {
                let rec = SummaryRecord {
                    id: doc.id.clone(),
                    summary,
                };
                lines.push_str(&serde_json::to_string(&rec)?);
                lines.push('\n');
                report.written += 1;
                report.fallback += usize::from(used_fallback && matches!(summarizer, Summarizer::Remote { .. }));
            }
            Some((Err(e), _)) => {
                warn!(id = %doc.id, "no summary: {e}");
                report.failed.push(doc.id.clone());
            }
            None => report.failed.push(doc.id.clone()),
        }
    }
    if !lines.is_empty() {
        use std::io::Write;
        let mut f = fs::OpenOptions::new().create(true).append(true).open(out_path)?;
        f.write_all(lines.as_bytes())?;
    }
    Ok(report)
}
