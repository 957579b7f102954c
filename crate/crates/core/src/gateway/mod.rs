//! Client for OpenAI-compatible services: file upload, fine-tune jobs and
//! chat completions.
//!
//! Only four endpoints are used:
//!
//! | method | path                          |
//! |--------|-------------------------------|
//! | POST   | `/v1/files` (multipart)       |
//! | POST   | `/v1/fine_tuning/jobs`        |
//! | GET    | `/v1/fine_tuning/jobs/{id}`   |
//! | POST   | `/v1/chat/completions`        |
//!
//! [`stub`] serves the same paths locally with deterministic behavior.

pub mod stub;

use std::fmt;
use std::path::Path;
use std::thread;
use std::time::Duration;

use rand::Rng;
use reqwest::blocking::{multipart, Client, RequestBuilder, Response};
use reqwest::header::RETRY_AFTER;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use url::Url;

use crate::promptgen::{self, ChatMessage};
use crate::registry::Epochs;

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";
pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_secs(30 * 60);

/// Bearer token. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn from_env(var: &str) -> Option<Self> {
        std::env::var(var).ok().filter(|k| !k.is_empty()).map(Self)
    }

    fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub base_url: Url,
    pub api_key: Option<ApiKey>,
    pub request_timeout: Duration,
    pub max_retries: u32,
    pub poll_interval: Duration,
    pub max_parallel_requests: usize,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base: Duration,
    pub backoff_max: Duration,
}

impl GatewayConfig {
    pub fn new(base_url: &str) -> Result<Self, GatewayError> {
        let base_url = Url::parse(base_url).map_err(|e| GatewayError::Config(format!("base_url {base_url:?}: {e}")))?;
        if !matches!(base_url.scheme(), "http" | "https") {
            return Err(GatewayError::Config(format!("base_url must be http(s), got {base_url}")));
        }
        Ok(Self {
            base_url,
            api_key: None,
            request_timeout: Duration::from_secs(60),
            max_retries: 3,
            poll_interval: DEFAULT_POLL_INTERVAL,
            max_parallel_requests: 4,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(30),
        })
    }

    pub fn with_api_key(mut self, key: Option<ApiKey>) -> Self {
        self.api_key = key;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.poll_interval.is_zero() {
            return Err(GatewayError::Config("poll_interval must be positive".into()));
        }
        if self.max_parallel_requests == 0 {
            return Err(GatewayError::Config("max_parallel_requests must be at least 1".into()));
        }
        Ok(())
    }

    fn endpoint(&self, path: &str) -> String {
        let base = self.base_url.as_str().trim_end_matches('/');
        let base = base.strip_suffix("/v1").unwrap_or(base);
        format!("{base}{path}")
    }
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    #[error("training file line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String, retry_after: Option<Duration> },
    #[error("response has no choices")]
    EmptyChoices,
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("completion request rejected locally: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    /// Worth retrying: network trouble, rate limiting, server-side errors.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Http { status, .. } => *status == 408 || *status == 429 || *status >= 500,
            _ => false,
        }
    }

    /// Failures that will hit every request alike (bad credentials).
    pub fn is_systemic(&self) -> bool {
        matches!(self, GatewayError::Http { status: 401 | 403, .. } | GatewayError::Config(_))
    }
}

impl From<reqwest::Error> for GatewayError {
    fn from(e: reqwest::Error) -> Self {
        if e.is_decode() {
            GatewayError::Decode(e.to_string())
        } else {
            GatewayError::Transport(e.to_string())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
    Cancelled,
}

impl JobStatus {
    /// Maps the service's status strings; `validating_files` counts as queued.
    pub fn from_wire(s: &str) -> Option<Self> {
        match s {
            "validating_files" | "queued" => Some(JobStatus::Queued),
            "running" => Some(JobStatus::Running),
            "succeeded" => Some(JobStatus::Succeeded),
            "failed" => Some(JobStatus::Failed),
            "cancelled" => Some(JobStatus::Cancelled),
            _ => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed | JobStatus::Cancelled)
    }
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JobStatus::Queued => "queued",
            JobStatus::Running => "running",
            JobStatus::Succeeded => "succeeded",
            JobStatus::Failed => "failed",
            JobStatus::Cancelled => "cancelled",
        };
        f.write_str(s)
    }
}

/// A fine-tune job. `fine_tuned_model_id` is set exactly when the job succeeded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub job_id: String,
    pub base_model: String,
    pub training_file_id: String,
    pub epochs: Epochs,
    pub status: JobStatus,
    pub fine_tuned_model_id: Option<String>,
}

#[derive(Deserialize)]
struct WireHyperparameters {
    #[serde(default)]
    n_epochs: Option<Epochs>,
}

#[derive(Deserialize)]
struct WireJob {
    id: String,
    #[serde(default)]
    model: String,
    #[serde(default)]
    training_file: String,
    status: String,
    #[serde(default)]
    fine_tuned_model: Option<String>,
    #[serde(default)]
    hyperparameters: Option<WireHyperparameters>,
}

impl TryFrom<WireJob> for FineTuneJob {
    type Error = GatewayError;

    fn try_from(w: WireJob) -> Result<Self, Self::Error> {
        let status = JobStatus::from_wire(&w.status)
            .ok_or_else(|| GatewayError::Decode(format!("unknown job status {:?}", w.status)))?;
        let fine_tuned_model_id = match status {
            JobStatus::Succeeded => Some(
                w.fine_tuned_model
                    .filter(|m| !m.is_empty())
                    .ok_or_else(|| GatewayError::Decode(format!("job {} succeeded without a model id", w.id)))?,
            ),
            _ => None,
        };
        Ok(FineTuneJob {
            job_id: w.id,
            base_model: w.model,
            training_file_id: w.training_file,
            epochs: w.hyperparameters.and_then(|h| h.n_epochs).unwrap_or_default(),
            status,
            fine_tuned_model_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    #[serde(rename = "model")]
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    /// Single-token, temperature-zero request used for classification.
    pub fn classification(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model_id: model_id.into(), messages, max_tokens: 1, temperature: 0.0 }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireCompletion {
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireFile {
    id: String,
}

/// Anything that can answer a chat completion. Implemented by [`Gateway`];
/// tests can substitute an in-process fake.
pub trait ChatCompletion: Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

/// Blocking HTTP client. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Gateway {
    cfg: GatewayConfig,
    http: Client,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let http =
            Client::builder().timeout(cfg.request_timeout).build().map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { cfg, http })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    fn authorized(&self, rb: RequestBuilder) -> RequestBuilder {
        match &self.cfg.api_key {
            Some(key) => rb.bearer_auth(key.expose()),
            None => rb,
        }
    }

    fn backoff(&self, attempt: u32, hint: Option<Duration>) -> Duration {
        if let Some(hint) = hint {
            return hint.min(self.cfg.backoff_max);
        }
        let exp = self.cfg.backoff_base.saturating_mul(1u32 << attempt.min(16));
        let delay = exp.min(self.cfg.backoff_max);
        let jitter_ms = (delay.as_millis() as u64 / 2).max(1);
        delay + Duration::from_millis(rand::rng().random_range(0..jitter_ms))
    }

    /// Runs `op` until it succeeds, fails permanently or retries run out.
    /// With `transport_only`, only errors raised before any response are retried.
    fn with_retry<T>(
        &self,
        transport_only: bool,
        mut op: impl FnMut() -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    let retryable =
                        if transport_only { matches!(e, GatewayError::Transport(_)) } else { e.is_transient() };
                    if !retryable || attempt >= self.cfg.max_retries {
                        return Err(e);
                    }
                    let hint = match &e {
                        GatewayError::Http { retry_after, .. } => *retry_after,
                        _ => None,
                    };
                    let wait = self.backoff(attempt, hint);
                    log::warn!("request failed ({e}); retry {} of {} in {wait:?}", attempt + 1, self.cfg.max_retries);
                    thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }

    fn check(resp: Response) -> Result<Response, GatewayError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let retry_after = resp
            .headers()
            .get(RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let body = resp.text().unwrap_or_default();
        let message = serde_json::from_str::<serde_json::Value>(&body)
            .ok()
            .and_then(|v| v["error"]["message"].as_str().map(str::to_string))
            .unwrap_or(body);
        Err(GatewayError::Http { status: status.as_u16(), message, retry_after })
    }

    /// Validates every line locally, then uploads the file for fine-tuning.
    pub fn upload_training_file(&self, path: impl AsRef<Path>) -> Result<String, GatewayError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| GatewayError::Io { path: path.display().to_string(), message: e.to_string() })?;
        validate_training_bytes(&bytes)?;
        let file_name =
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "train.jsonl".into());
        let url = self.cfg.endpoint("/v1/files");
        let file: WireFile = self.with_retry(true, || {
            let part =
                multipart::Part::bytes(bytes.clone()).file_name(file_name.clone()).mime_str("application/jsonl")?;
            let form = multipart::Form::new().text("purpose", "fine-tune").part("file", part);
            let resp = self.authorized(self.http.post(&url)).multipart(form).send()?;
            Ok(Self::check(resp)?.json()?)
        })?;
        Ok(file.id)
    }

    /// Starts a fine-tune. `Epochs::Auto` omits the override.
    pub fn create_finetune(
        &self,
        file_id: &str,
        base_model: &str,
        epochs: Epochs,
    ) -> Result<FineTuneJob, GatewayError> {
        let mut body = json!({ "training_file": file_id, "model": base_model });
        if let Some(n) = epochs.explicit() {
            body["hyperparameters"] = json!({ "n_epochs": n });
        }
        let url = self.cfg.endpoint("/v1/fine_tuning/jobs");
        let wire: WireJob = self.with_retry(true, || {
            let resp = self.authorized(self.http.post(&url)).json(&body).send()?;
            Ok(Self::check(resp)?.json()?)
        })?;
        let mut job = FineTuneJob::try_from(wire)?;
        if job.base_model.is_empty() {
            job.base_model = base_model.to_string();
        }
        if job.training_file_id.is_empty() {
            job.training_file_id = file_id.to_string();
        }
        if job.epochs == Epochs::Auto {
            job.epochs = epochs;
        }
        Ok(job)
    }

    pub fn get_job(&self, job_id: &str) -> Result<FineTuneJob, GatewayError> {
        let url = self.cfg.endpoint(&format!("/v1/fine_tuning/jobs/{job_id}"));
        let wire: WireJob = self.with_retry(false, || {
            let resp = self.authorized(self.http.get(&url)).send()?;
            Ok(Self::check(resp)?.json()?)
        })?;
        FineTuneJob::try_from(wire)
    }

    /// Polls every `poll_interval` until the job is terminal. Failed and
    /// cancelled jobs are returned, not raised.
    pub fn poll_until_done(&self, job: &FineTuneJob) -> Result<FineTuneJob, GatewayError> {
        let mut current = job.clone();
        while !current.status.is_terminal() {
            thread::sleep(self.cfg.poll_interval);
            let fresh = self.get_job(&current.job_id)?;
            log::info!("job {} is {}", fresh.job_id, fresh.status);
            current = FineTuneJob {
                base_model: if fresh.base_model.is_empty() { current.base_model } else { fresh.base_model.clone() },
                training_file_id: if fresh.training_file_id.is_empty() {
                    current.training_file_id
                } else {
                    fresh.training_file_id.clone()
                },
                epochs: if fresh.epochs == Epochs::Auto { current.epochs } else { fresh.epochs },
                ..fresh
            };
        }
        Ok(current)
    }
}

impl ChatCompletion for Gateway {
    /// First choice's content, untrimmed.
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        request.validate()?;
        let url = self.cfg.endpoint("/v1/chat/completions");
        let wire: WireCompletion = self.with_retry(false, || {
            let resp = self.authorized(self.http.post(&url)).json(request).send()?;
            Ok(Self::check(resp)?.json()?)
        })?;
        let first = wire.choices.into_iter().next().ok_or(GatewayError::EmptyChoices)?;
        Ok(first.message.content.unwrap_or_default())
    }
}

/// Schema check applied before upload; reports the first bad line (1-based).
pub fn validate_training_bytes(bytes: &[u8]) -> Result<usize, GatewayError> {
    let text = std::str::from_utf8(bytes).map_err(|e| GatewayError::Schema {
        line: bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1,
        message: "invalid UTF-8".into(),
    })?;
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        promptgen::parse_json_line(line).map_err(|message| GatewayError::Schema { line: i + 1, message })?;
        n += 1;
    }
    if n == 0 {
        return Err(GatewayError::Schema { line: 1, message: "file is empty".into() });
    }
    Ok(n)
}
