//! In-process stand-in for an OpenAI-compatible service.
//!
//! Speaks the four endpoints used by [`super::Gateway`] over real HTTP on a
//! local port:
//!
//! - uploads are schema-checked line by line and get the id
//!   `file-<first 24 hex digits of sha256(content)>`;
//! - fine-tune jobs are numbered `ftjob-0001`, `ftjob-0002`, ... and report
//!   `running` until they have been polled `polls_to_complete` times, then
//!   `succeeded` with model `ft:stub:<file-id>`;
//! - chat completions are answered by a [`Responder`]: keyword rules, the
//!   answer memorized from the model's training file, or a naive Bayes
//!   model trained on that file.
//!
//! With `enforce_classification` set, completion requests must carry
//! `max_tokens = 1`, `temperature = 0` and the exact classification prompt,
//! otherwise the stub answers 400. Every request is recorded.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::classify::{predict_baseline, train_baseline, BaselineModel};
use crate::corpus::Label;
use crate::promptgen::{self, ChatExample, ChatRole, CLASSIFICATION_PROMPT};
use crate::textclean::{CleanedIssue, CleaningMethod};

/// One keyword rule: a user message containing `keyword` (case-insensitive)
/// gets `response` verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordRule {
    pub keyword: String,
    pub response: String,
}

/// Parses a mapping file: `keyword=response` per line, `#` comments.
pub fn parse_keyword_rules(text: &str) -> Result<Vec<KeywordRule>, String> {
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| format!("mapping line {}: expected keyword=response", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("mapping line {}: empty keyword", i + 1));
        }
        rules.push(KeywordRule { keyword: k.to_lowercase(), response: v.to_string() });
    }
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Responder {
    /// First matching rule wins; the issue text after the prompt is searched.
    Keywords(Vec<KeywordRule>),
    /// Replays the assistant answer stored for an identical user message in
    /// the model's training file.
    Memorized,
    /// Naive Bayes trained on the model's training file.
    Baseline { alpha: f64 },
}

#[derive(Debug, Clone)]
pub struct StubConfig {
    pub responder: Responder,
    /// Reply when no rule or memorized example applies.
    pub default_response: String,
    pub polls_to_complete: u32,
    pub known_base_models: Vec<String>,
    /// Accepted, but their jobs end in `failed`.
    pub failing_base_models: Vec<String>,
    pub enforce_classification: bool,
    /// When set, requests without `Authorization: Bearer <key>` get 401.
    pub required_api_key: Option<String>,
    /// The first N completion requests get 503 with `Retry-After: 0`.
    pub transient_failures: u32,
    pub workers: usize,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            responder: Responder::Memorized,
            default_response: "question".into(),
            polls_to_complete: 2,
            known_base_models: vec!["gpt-3.5-turbo".into(), "gpt-3.5-turbo-0613".into(), "gpt-3.5-turbo-1106".into()],
            failing_base_models: Vec::new(),
            enforce_classification: true,
            required_api_key: None,
            transient_failures: 0,
            workers: 4,
        }
    }
}

/// A request as received by the stub.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    /// Parsed JSON body; multipart uploads record `{"purpose", "filename", "bytes"}`.
    pub body: Value,
}

struct StubJob {
    id: String,
    model: String,
    training_file: String,
    n_epochs: Value,
    polls: u32,
    fails: bool,
}

#[derive(Default)]
struct StubState {
    files: HashMap<String, Vec<ChatExample>>,
    jobs: Vec<StubJob>,
    baselines: HashMap<String, Arc<BaselineModel>>,
    completions_seen: u32,
    requests: Vec<RecordedRequest>,
}

struct Shared {
    cfg: StubConfig,
    state: Mutex<StubState>,
}

impl Shared {
    fn state(&self) -> MutexGuard<'_, StubState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// A running stub. Stops when dropped.
pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral port on 127.0.0.1.
    pub fn start(cfg: StubConfig) -> io::Result<Self> {
        Self::bind("127.0.0.1:0", cfg)
    }

    pub fn bind(addr: &str, cfg: StubConfig) -> io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(|e| io::Error::other(e.to_string()))?);
        let addr = server.server_addr().to_ip().ok_or_else(|| io::Error::other("stub bound to a non-IP address"))?;
        let shared = Arc::new(Shared { state: Mutex::new(StubState::default()), cfg });
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..shared.cfg.workers.max(1))
            .map(|_| {
                let (server, shared, stop) = (server.clone(), shared.clone(), stop.clone());
                std::thread::spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        match server.recv_timeout(Duration::from_millis(50)) {
                            Ok(Some(req)) => handle(&shared, req),
                            Ok(None) => {}
                            Err(_) => break,
                        }
                    }
                })
            })
            .collect();
        Ok(Self { addr, shared, stop, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far, in arrival order.
    pub fn recorded(&self) -> Vec<RecordedRequest> {
        self.shared.state().requests.clone()
    }

    pub fn recorded_for(&self, method: &str, path_prefix: &str) -> Vec<RecordedRequest> {
        self.recorded().into_iter().filter(|r| r.method == method && r.path.starts_with(path_prefix)).collect()
    }

    /// Blocks until the worker threads exit (they only do on shutdown).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        drop(self);
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Deterministic file id for uploaded bytes.
pub fn file_id_for(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    format!("file-{}", &hex::encode(digest)[..24])
}

pub fn model_id_for(file_id: &str) -> String {
    format!("ft:stub:{file_id}")
}

struct Reply {
    status: u16,
    body: Value,
    retry_after: Option<&'static str>,
}

impl Reply {
    fn ok(body: Value) -> Self {
        Self { status: 200, body, retry_after: None }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": { "message": message.into(), "type": "invalid_request_error" } }),
            retry_after: None,
        }
    }
}

fn header_value(req: &Request, name: &str) -> Option<String> {
    req.headers()
        .iter()
        .find(|h| h.field.as_str().as_str().eq_ignore_ascii_case(name))
        .map(|h| h.value.as_str().to_string())
}

fn handle(shared: &Shared, mut req: Request) {
    let method = req.method().clone();
    let path = req.url().split('?').next().unwrap_or("").to_string();
    let content_type = header_value(&req, "Content-Type").unwrap_or_default();
    let auth = header_value(&req, "Authorization");
    let mut body = Vec::new();
    let reply = match req.as_reader().read_to_end(&mut body) {
        Err(e) => Reply::error(400, format!("cannot read body: {e}")),
        Ok(_) => {
            let authorized = match &shared.cfg.required_api_key {
                Some(key) => auth.as_deref() == Some(format!("Bearer {key}").as_str()),
                None => true,
            };
            if authorized {
                route(shared, &method, &path, &content_type, &body)
            } else {
                record(shared, &method, &path, Value::Null);
                Reply::error(401, "Incorrect API key provided")
            }
        }
    };
    let mut resp = Response::from_string(reply.body.to_string())
        .with_status_code(reply.status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"));
    if let Some(ra) = reply.retry_after {
        resp = resp.with_header(Header::from_bytes("Retry-After", ra).expect("static header"));
    }
    let _ = req.respond(resp);
}

fn record(shared: &Shared, method: &Method, path: &str, body: Value) {
    shared.state().requests.push(RecordedRequest { method: method.to_string(), path: path.to_string(), body });
}

fn route(shared: &Shared, method: &Method, path: &str, content_type: &str, body: &[u8]) -> Reply {
    match (method, path) {
        (Method::Post, "/v1/files") => upload(shared, content_type, body),
        (Method::Post, "/v1/fine_tuning/jobs") => with_json(shared, method, path, body, create_job),
        (Method::Get, p) if p.starts_with("/v1/fine_tuning/jobs/") => {
            record(shared, method, path, Value::Null);
            get_job(shared, &p["/v1/fine_tuning/jobs/".len()..])
        }
        (Method::Post, "/v1/chat/completions") => with_json(shared, method, path, body, complete),
        _ => {
            record(shared, method, path, Value::Null);
            Reply::error(404, format!("no route for {method} {path}"))
        }
    }
}

fn with_json(shared: &Shared, method: &Method, path: &str, body: &[u8], f: fn(&Shared, &Value) -> Reply) -> Reply {
    match serde_json::from_slice::<Value>(body) {
        Ok(v) => {
            record(shared, method, path, v.clone());
            f(shared, &v)
        }
        Err(e) => {
            record(shared, method, path, Value::Null);
            Reply::error(400, format!("invalid JSON body: {e}"))
        }
    }
}

struct Part {
    name: String,
    filename: Option<String>,
    data: Vec<u8>,
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

fn disposition_param(headers: &str, key: &str) -> Option<String> {
    let line = headers.lines().find(|l| l.to_ascii_lowercase().starts_with("content-disposition"))?;
    line.split(';').map(str::trim).find_map(|p| {
        let (k, v) = p.split_once('=')?;
        (k.trim() == key).then(|| v.trim().trim_matches('"').to_string())
    })
}

fn parse_multipart(content_type: &str, body: &[u8]) -> Result<Vec<Part>, String> {
    let boundary = content_type
        .split(';')
        .map(str::trim)
        .find_map(|p| p.strip_prefix("boundary="))
        .map(|b| b.trim_matches('"'))
        .ok_or("missing multipart boundary")?;
    let delim = format!("--{boundary}").into_bytes();
    let mut parts = Vec::new();
    let mut rest = body;
    let start = find(rest, &delim).ok_or("boundary not found")?;
    rest = &rest[start + delim.len()..];
    loop {
        if rest.starts_with(b"--") {
            break;
        }
        rest = rest.strip_prefix(b"\r\n").ok_or("malformed part")?;
        let header_end = find(rest, b"\r\n\r\n").ok_or("unterminated part headers")?;
        let headers = String::from_utf8_lossy(&rest[..header_end]).into_owned();
        rest = &rest[header_end + 4..];
        let mut closing = b"\r\n".to_vec();
        closing.extend_from_slice(&delim);
        let end = find(rest, &closing).ok_or("unterminated part")?;
        parts.push(Part {
            name: disposition_param(&headers, "name").unwrap_or_default(),
            filename: disposition_param(&headers, "filename"),
            data: rest[..end].to_vec(),
        });
        rest = &rest[end + closing.len()..];
    }
    Ok(parts)
}

fn upload(shared: &Shared, content_type: &str, body: &[u8]) -> Reply {
    let method = Method::Post;
    let parts = match parse_multipart(content_type, body) {
        Ok(p) => p,
        Err(e) => {
            record(shared, &method, "/v1/files", Value::Null);
            return Reply::error(400, e);
        }
    };
    let purpose = parts.iter().find(|p| p.name == "purpose").map(|p| String::from_utf8_lossy(&p.data).into_owned());
    let file = parts.iter().find(|p| p.name == "file");
    record(
        shared,
        &method,
        "/v1/files",
        json!({
            "purpose": purpose,
            "filename": file.and_then(|f| f.filename.clone()),
            "bytes": file.map(|f| f.data.len()),
        }),
    );
    let Some(file) = file else {
        return Reply::error(400, "missing file part");
    };
    if purpose.as_deref() != Some("fine-tune") {
        return Reply::error(400, "purpose must be fine-tune");
    }
    let text = match std::str::from_utf8(&file.data) {
        Ok(t) => t,
        Err(_) => return Reply::error(400, "file is not UTF-8"),
    };
    let examples = match promptgen::parse_jsonl(text) {
        Ok(xs) if !xs.is_empty() => xs,
        Ok(_) => return Reply::error(400, "file is empty"),
        Err(e) => return Reply::error(400, format!("invalid training file: {e}")),
    };
    let id = file_id_for(&file.data);
    shared.state().files.insert(id.clone(), examples);
    Reply::ok(json!({
        "id": id,
        "object": "file",
        "bytes": file.data.len(),
        "filename": file.filename,
        "purpose": "fine-tune",
    }))
}

fn job_json(job: &StubJob, cfg: &StubConfig) -> Value {
    let (status, model) = if job.polls >= cfg.polls_to_complete {
        if job.fails {
            ("failed", Value::Null)
        } else {
            ("succeeded", json!(model_id_for(&job.training_file)))
        }
    } else if job.polls == 0 {
        ("queued", Value::Null)
    } else {
        ("running", Value::Null)
    };
    json!({
        "id": job.id,
        "object": "fine_tuning.job",
        "model": job.model,
        "training_file": job.training_file,
        "status": status,
        "fine_tuned_model": model,
        "hyperparameters": { "n_epochs": job.n_epochs },
    })
}

fn create_job(shared: &Shared, body: &Value) -> Reply {
    let Some(file) = body["training_file"].as_str() else {
        return Reply::error(400, "training_file is required");
    };
    let Some(model) = body["model"].as_str() else {
        return Reply::error(400, "model is required");
    };
    let cfg = &shared.cfg;
    let fails = cfg.failing_base_models.iter().any(|m| m == model);
    if !fails && !cfg.known_base_models.iter().any(|m| m == model) {
        return Reply::error(400, format!("Model {model} is not available for fine-tuning"));
    }
    let n_epochs = match &body["hyperparameters"]["n_epochs"] {
        Value::Null => json!("auto"),
        Value::Number(n) if n.as_u64().is_some_and(|n| n >= 1) => json!(n),
        Value::String(s) if s == "auto" => json!("auto"),
        other => return Reply::error(400, format!("invalid n_epochs {other}")),
    };
    let mut state = shared.state();
    if !state.files.contains_key(file) {
        return Reply::error(400, format!("invalid training_file: {file}"));
    }
    let job = StubJob {
        id: format!("ftjob-{:04}", state.jobs.len() + 1),
        model: model.to_string(),
        training_file: file.to_string(),
        n_epochs,
        polls: 0,
        fails,
    };
    let out = job_json(&job, cfg);
    state.jobs.push(job);
    Reply::ok(out)
}

fn get_job(shared: &Shared, id: &str) -> Reply {
    let mut state = shared.state();
    match state.jobs.iter_mut().find(|j| j.id == id) {
        Some(job) => {
            job.polls += 1;
            Reply::ok(job_json(job, &shared.cfg))
        }
        None => Reply::error(404, format!("no such job {id}")),
    }
}

/// Checks the single-token, temperature-zero, verbatim-prompt contract.
fn classification_violation(body: &Value) -> Option<String> {
    if body["max_tokens"].as_u64() != Some(1) {
        return Some(format!("max_tokens must be 1, got {}", body["max_tokens"]));
    }
    if body["temperature"].as_f64() != Some(0.0) {
        return Some(format!("temperature must be 0.0, got {}", body["temperature"]));
    }
    let messages = body["messages"].as_array()?;
    let users: Vec<&Value> = messages.iter().filter(|m| m["role"] == "user").collect();
    if users.len() != 1 {
        return Some(format!("expected exactly one user message, got {}", users.len()));
    }
    let content = users[0]["content"].as_str().unwrap_or("");
    if promptgen::split_user_content(content).is_none() {
        return Some(format!("user message does not start with the classification prompt {CLASSIFICATION_PROMPT:?}"));
    }
    None
}

fn issue_from_content(content: &str, label: Label) -> CleanedIssue {
    let (title, body) = promptgen::split_user_content(content).unwrap_or(("", content));
    CleanedIssue {
        repository: String::new(),
        label,
        title_clean: title.to_string(),
        body_clean: body.to_string(),
        method: CleaningMethod::Method1,
    }
}

fn complete(shared: &Shared, body: &Value) -> Reply {
    let cfg = &shared.cfg;
    {
        let mut state = shared.state();
        state.completions_seen += 1;
        if state.completions_seen <= cfg.transient_failures {
            return Reply {
                status: 503,
                body: json!({ "error": { "message": "stub is temporarily overloaded" } }),
                retry_after: Some("0"),
            };
        }
    }
    if cfg.enforce_classification {
        if let Some(problem) = classification_violation(body) {
            return Reply::error(400, problem);
        }
    }
    let Some(messages) = body["messages"].as_array() else {
        return Reply::error(400, "messages must be an array");
    };
    let model = body["model"].as_str().unwrap_or("").to_string();
    let content = messages
        .iter()
        .rev()
        .find(|m| m["role"] == "user")
        .and_then(|m| m["content"].as_str())
        .unwrap_or("")
        .to_string();

    let answer = match &cfg.responder {
        Responder::Keywords(rules) => {
            let issue_text = promptgen::split_user_content(&content)
                .map(|(t, b)| format!("{t}\n{b}"))
                .unwrap_or_else(|| content.clone())
                .to_lowercase();
            rules
                .iter()
                .find(|r| issue_text.contains(&r.keyword))
                .map(|r| r.response.clone())
                .unwrap_or_else(|| cfg.default_response.clone())
        }
        Responder::Memorized | Responder::Baseline { .. } => {
            let mut state = shared.state();
            let Some(file_id) = model.strip_prefix("ft:stub:").map(str::to_string) else {
                return Reply::error(404, format!("The model `{model}` does not exist"));
            };
            let Some(examples) = state.files.get(&file_id) else {
                return Reply::error(404, format!("The model `{model}` does not exist"));
            };
            match &cfg.responder {
                Responder::Baseline { alpha } => {
                    let model_nb = match state.baselines.get(&file_id) {
                        Some(m) => m.clone(),
                        None => {
                            let train: Vec<CleanedIssue> = examples
                                .iter()
                                .filter_map(|ex| {
                                    let label = ex.validate().ok()?;
                                    Some(issue_from_content(&ex.user()?.content, label))
                                })
                                .collect();
                            match train_baseline(&train, *alpha) {
                                Ok(m) => {
                                    let m = Arc::new(m);
                                    state.baselines.insert(file_id.clone(), m.clone());
                                    m
                                }
                                Err(e) => return Reply::error(400, format!("cannot train stub baseline: {e}")),
                            }
                        }
                    };
                    predict_baseline(&model_nb, &issue_from_content(&content, Label::Bug)).to_string()
                }
                _ => examples
                    .iter()
                    .find(|ex| ex.user().is_some_and(|u| u.content == content))
                    .and_then(|ex| ex.messages.iter().rev().find(|m| m.role == ChatRole::Assistant))
                    .map(|m| m.content.clone())
                    .unwrap_or_else(|| cfg.default_response.clone()),
            }
        }
    };

    let n = shared.state().requests.len();
    Reply::ok(json!({
        "id": format!("chatcmpl-stub-{n}"),
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": answer },
            "finish_reason": "length",
        }],
        "usage": { "prompt_tokens": 0, "completion_tokens": 1, "total_tokens": 1 },
    }))
}
