//! Chat-completions endpoint access.
//!
//! Every model interaction in the suite goes through [`Gateway`]: prompt
//! rendering from the frozen task templates, bounded-concurrency batching,
//! retries with exponential backoff, and an on-disk response cache keyed on
//! the exact request. The cache stores the full prediction (including
//! latency and attempt count), so a warm rerun reproduces the cold run byte
//! for byte. A deterministic in-process [`mock`] endpoint implements the same
//! wire protocol for hermetic tests.
//!
//! The task templates are fixed strings. Scores are only comparable across
//! models if every model saw the identical prompt, so nothing here
//! interpolates anything beyond the declared slots.

pub mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::Granularity;

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

pub const QA_TEMPLATE: &str = "Please answer the question:\n{question}\nAnswer:";
pub const ORDERING_TEMPLATE: &str = "Please answer the question with 'True' or 'False'.\n\
Question: Did A happen before B?\n\nA: {event1}\nB: {event2}\n\nAnswer:";
pub const FACT_TEMPLATE: &str =
    "Please answer the claim with 'True', 'False' or 'Conflicting'.\nClaim: {claim}\nAnswer:";
pub const DATING_TEMPLATE: &str = "Here is an event:\n{event}\n\
Please answer with the date on which the event happened ({format}).\nAnswer:";
pub const COMPLETION_TEMPLATE: &str = "Please complete the following sentence:\n{question}";

pub const SYSTEM_DEFAULT: &str = "You are a helpful assistant.";
pub const SYSTEM_HISTORIAN: &str = "Provide direct and concise answers to historical or \
temporal questions. You are a historian specializing in temporal question answering. Please \
avoid speculation and present verified historical knowledge wherever possible.";
pub const SYSTEM_COT: &str = "You are a helpful assistant that thinks step by step.";

/// System prompt persona for a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemStyle {
    #[default]
    Default,
    Historian,
    Cot,
}

impl SystemStyle {
    pub fn prompt(&self) -> &'static str {
        match self {
            SystemStyle::Default => SYSTEM_DEFAULT,
            SystemStyle::Historian => SYSTEM_HISTORIAN,
            SystemStyle::Cot => SYSTEM_COT,
        }
    }
}

/// Replaces `{slot}` markers in a template.
///
/// Fails if any marker is left unfilled, so a typo'd input map cannot send a
/// literal `{question}` to the model.
pub fn fill_template(template: &str, inputs: &[(&str, &str)]) -> Result<String> {
    let mut out = template.to_owned();
    for (slot, value) in inputs {
        out = out.replace(&format!("{{{slot}}}"), value);
    }
    if let Some(m) = regex::Regex::new(r"\{[a-z_0-9]+\}").unwrap().find(&out) {
        let name = m.as_str().trim_matches(['{', '}']);
        return Err(Error::MissingSlot(name.to_owned()));
    }
    Ok(out)
}

/// A fully specified task prompt, one variant per task.
#[derive(Debug, Clone, Copy)]
pub enum TaskPrompt<'a> {
    Qa { question: &'a str },
    EventOrdering { event1: &'a str, event2: &'a str },
    FactChecking { claim: &'a str },
    EventDating { event: &'a str, granularity: Granularity },
    Completion { question: &'a str },
}

impl TaskPrompt<'_> {
    /// Renders the user-message text.
    pub fn render(&self) -> String {
        let filled = match self {
            TaskPrompt::Qa { question } => fill_template(QA_TEMPLATE, &[("question", question)]),
            TaskPrompt::EventOrdering { event1, event2 } => {
                fill_template(ORDERING_TEMPLATE, &[("event1", event1), ("event2", event2)])
            }
            TaskPrompt::FactChecking { claim } => fill_template(FACT_TEMPLATE, &[("claim", claim)]),
            TaskPrompt::EventDating { event, granularity } => fill_template(
                DATING_TEMPLATE,
                &[("event", event), ("format", granularity.prompt_format())],
            ),
            TaskPrompt::Completion { question } => {
                fill_template(COMPLETION_TEMPLATE, &[("question", question)])
            }
        };
        filled.expect("task templates declare exactly their slots")
    }

    /// The two-message conversation for this prompt.
    pub fn messages(&self, style: SystemStyle) -> Vec<Message> {
        vec![
            Message { role: Role::System, content: style.prompt().to_owned() },
            Message { role: Role::User, content: self.render() },
        ]
    }
}

// ---------------------------------------------------------------------------
// Wire types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: Message,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Bearer token wrapper that keeps the secret out of Debug output and logs.
#[derive(Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        ApiKey(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(redacted)")
    }
}

/// Connection settings for one model endpoint.
#[derive(Debug, Clone)]
pub struct EndpointConfig {
    /// Base URL up to but excluding `/chat/completions`,
    /// e.g. `http://localhost:8080/v1`.
    pub base_url: String,
    pub model_name: String,
    pub api_key: Option<ApiKey>,
    /// Upper bound on in-flight requests during a batch. Clamped to >= 1.
    pub max_concurrency: usize,
    pub timeout: Duration,
    pub temperature: f64,
    /// Retries after the first attempt, for 429/5xx/transport failures.
    pub max_retries: u32,
    /// First backoff delay; doubles per retry, capped at 2 s.
    pub retry_backoff: Duration,
    /// Response cache directory; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key: None,
            max_concurrency: 8,
            timeout: Duration::from_secs(30),
            temperature: 0.0,
            max_retries: 3,
            retry_backoff: Duration::from_millis(200),
            cache_dir: None,
        }
    }
}

/// One model completion, as consumed by scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    /// Verbatim completion text, trailing whitespace trimmed.
    pub raw_text: String,
    pub latency_ms: u64,
    /// Attempts spent obtaining this response (1 = first try).
    pub attempt_count: u32,
    pub from_cache: bool,
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

enum Transport {
    Http(reqwest::Client),
    Mock(mock::MockOracle),
}

/// Client for one endpoint: caching, retries, batching, request logging.
pub struct Gateway {
    config: EndpointConfig,
    transport: Transport,
    request_log: Mutex<Option<fs::File>>,
}

#[derive(Serialize)]
struct CacheKeyPayload<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    raw_text: String,
    latency_ms: u64,
    attempt_count: u32,
}

#[derive(Serialize)]
struct LogLine<'a> {
    item_id: &'a str,
    model: &'a str,
    messages: &'a [Message],
    raw_text: &'a str,
    latency_ms: u64,
    attempt_count: u32,
    from_cache: bool,
}

/// Outcome of one HTTP exchange, before retry policy is applied.
enum SendFailure {
    Retryable(Error),
    Fatal(Error),
}

impl Gateway {
    /// Gateway over HTTP.
    pub fn new(config: EndpointConfig) -> Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Gateway { config, transport: Transport::Http(client), request_log: Mutex::new(None) })
    }

    /// Gateway that answers from an in-process mock oracle. Caching and
    /// logging behave exactly as over HTTP.
    pub fn with_oracle(config: EndpointConfig, oracle: mock::MockOracle) -> Self {
        Gateway { config, transport: Transport::Mock(oracle), request_log: Mutex::new(None) }
    }

    pub fn model_name(&self) -> &str {
        &self.config.model_name
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Starts appending every completion to a JSONL audit log.
    ///
    /// Lines land in completion order, which under concurrency is not the
    /// request order; reports stay deterministic because they never read
    /// this file.
    pub fn log_requests_to(&self, path: &Path) -> Result<()> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        *self.request_log.lock().unwrap() = Some(file);
        Ok(())
    }

    fn cache_key(&self, messages: &[Message]) -> String {
        let payload = CacheKeyPayload {
            model: &self.config.model_name,
            messages,
            temperature: self.config.temperature,
        };
        let bytes = serde_json::to_vec(&payload).expect("cache key serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        format!("{:x}", hasher.finalize())
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.config.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn read_cache(&self, key: &str, item_id: &str) -> Option<Prediction> {
        let path = self.cache_path(key)?;
        let bytes = fs::read(&path).ok()?;
        // A corrupt entry is treated as a miss and overwritten.
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        Some(Prediction {
            item_id: item_id.to_owned(),
            raw_text: entry.raw_text,
            latency_ms: entry.latency_ms,
            attempt_count: entry.attempt_count,
            from_cache: true,
        })
    }

    fn write_cache(&self, key: &str, pred: &Prediction) -> Result<()> {
        let Some(path) = self.cache_path(key) else { return Ok(()) };
        let dir = path.parent().expect("cache path has parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let entry = CacheEntry {
            raw_text: pred.raw_text.clone(),
            latency_ms: pred.latency_ms,
            attempt_count: pred.attempt_count,
        };
        // Write-then-rename keeps concurrent readers off half-written files.
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        fs::write(&tmp, serde_json::to_vec(&entry).expect("cache entry serializes"))
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    fn log(&self, pred: &Prediction, messages: &[Message]) {
        let mut guard = self.request_log.lock().unwrap();
        if let Some(file) = guard.as_mut() {
            let line = LogLine {
                item_id: &pred.item_id,
                model: &self.config.model_name,
                messages,
                raw_text: &pred.raw_text,
                latency_ms: pred.latency_ms,
                attempt_count: pred.attempt_count,
                from_cache: pred.from_cache,
            };
            let mut buf = serde_json::to_vec(&line).expect("log line serializes");
            buf.push(b'\n');
            let _ = file.write_all(&buf);
        }
    }

    async fn send_once(&self, messages: &[Message]) -> std::result::Result<String, SendFailure> {
        match &self.transport {
            Transport::Mock(oracle) => Ok(oracle.respond(messages)),
            Transport::Http(client) => self.send_http(client, messages).await,
        }
    }

    async fn send_http(
        &self,
        client: &reqwest::Client,
        messages: &[Message],
    ) -> std::result::Result<String, SendFailure> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = ChatRequest {
            model: self.config.model_name.clone(),
            messages: messages.to_vec(),
            temperature: self.config.temperature,
        };
        let mut req = client.post(&url).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key.expose());
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                SendFailure::Retryable(Error::Timeout(self.config.timeout))
            } else {
                SendFailure::Retryable(Error::Transport(e.to_string()))
            }
        })?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(SendFailure::Fatal(Error::AuthFailure { status: status.as_u16() }));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(SendFailure::Retryable(Error::Transport(format!("status {status}"))));
        }
        if !status.is_success() {
            return Err(SendFailure::Fatal(Error::Transport(format!("status {status}"))));
        }
        let text = resp.text().await.map_err(|e| {
            SendFailure::Retryable(Error::Transport(format!("reading body: {e}")))
        })?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|_| SendFailure::Fatal(Error::MalformedResponse(snippet(&text))))?;
        match parsed.choices.into_iter().next() {
            Some(choice) => Ok(choice.message.content),
            None => Err(SendFailure::Fatal(Error::MalformedResponse(snippet(&text)))),
        }
    }

    /// One completion: cache lookup, then the endpoint with retries.
    pub async fn complete(&self, item_id: &str, messages: &[Message]) -> Result<Prediction> {
        let key = self.cache_key(messages);
        if let Some(pred) = self.read_cache(&key, item_id) {
            self.log(&pred, messages);
            return Ok(pred);
        }
        let started = Instant::now();
        let mut attempt: u32 = 0;
        let raw = loop {
            attempt += 1;
            match self.send_once(messages).await {
                Ok(text) => break text,
                Err(SendFailure::Fatal(e)) => return Err(e),
                Err(SendFailure::Retryable(e)) => {
                    if attempt > self.config.max_retries {
                        return Err(Error::Exhausted { attempts: attempt, last: e.to_string() });
                    }
                    let factor = 1u32 << (attempt - 1).min(4);
                    let delay = (self.config.retry_backoff * factor)
                        .min(Duration::from_secs(2));
                    tokio::time::sleep(delay).await;
                }
            }
        };
        let pred = Prediction {
            item_id: item_id.to_owned(),
            raw_text: raw.trim_end().to_owned(),
            latency_ms: started.elapsed().as_millis() as u64,
            attempt_count: attempt,
            from_cache: false,
        };
        self.write_cache(&key, &pred)?;
        self.log(&pred, messages);
        Ok(pred)
    }

    /// Runs many completions with at most `max_concurrency` in flight.
    ///
    /// Results come back in request order; each item fails independently and
    /// a failure never aborts its neighbors.
    pub async fn batch_complete(
        &self,
        requests: &[(String, Vec<Message>)],
    ) -> Vec<Result<Prediction>> {
        futures::stream::iter(requests.iter().map(|(id, msgs)| self.complete(id, msgs)))
            .buffered(self.config.max_concurrency.max(1))
            .collect()
            .await
    }
}

fn snippet(text: &str) -> String {
    let mut s: String = text.chars().take(200).collect();
    if s.len() < text.len() {
        s.push_str("...");
    }
    s
}

/// Groups inputs for [`Gateway::batch_complete`] from parallel id/message
/// vectors; a convenience for the suite runners.
pub fn batch_requests(
    ids: impl IntoIterator<Item = String>,
    messages: impl IntoIterator<Item = Vec<Message>>,
) -> Vec<(String, Vec<Message>)> {
    ids.into_iter().zip(messages).collect()
}

/// Reads prompt slot inputs from a BTreeMap, for callers that build prompts
/// dynamically (the CLI's ad-hoc probe path).
pub fn fill_template_map(template: &str, inputs: &BTreeMap<String, String>) -> Result<String> {
    let pairs: Vec<(&str, &str)> =
        inputs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    fill_template(template, &pairs)
}
