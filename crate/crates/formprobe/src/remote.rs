//! HTTP clients: a chat-completion backend, an embedding provider, and an
//! executor speaking the JSON action protocol.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use formprobe_core::embed::{EmbedError, EmbeddingVector, TextEmbedProvider};
use formprobe_core::llm::{CompletionBackend, LlmError, PromptBundle, TEMPERATURE};
use formprobe_core::submission::{Executor, ExecutorError, Page};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use ureq::Agent;

use crate::protocol::{Action, ErrorKind, ErrorResponse, ExecutorRequest, ExecutorResponse};

fn agent(timeout: Duration) -> Agent {
    Agent::new_with_config(Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build())
}

enum CallError {
    /// Worth another attempt: transport failure, 429, 5xx.
    Transient(String),
    Fatal(String),
}

fn post_json<T: DeserializeOwned>(agent: &Agent, url: &str, api_key: Option<&str>, body: &serde_json::Value) -> Result<T, CallError> {
    let mut req = agent.post(url);
    if let Some(k) = api_key {
        req = req.header("Authorization", format!("Bearer {k}"));
    }
    let mut resp = req.send_json(body).map_err(|e| CallError::Transient(e.to_string()))?;
    let status = resp.status().as_u16();
    if status == 429 || status >= 500 {
        return Err(CallError::Transient(format!("HTTP {status}")));
    }
    if status >= 400 {
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(CallError::Fatal(format!("HTTP {status}: {}", text.trim())));
    }
    resp.body_mut().read_json::<T>().map_err(|e| CallError::Fatal(format!("unexpected response body: {e}")))
}

/// Runs `call` up to `attempts` times, backing off between transient
/// failures. Returns the attempt count alongside any final error.
fn with_retries<T>(attempts: u32, backoff: Duration, mut call: impl FnMut() -> Result<T, CallError>) -> Result<T, (u32, String)> {
    let mut n = 0;
    loop {
        n += 1;
        match call() {
            Ok(v) => return Ok(v),
            Err(CallError::Fatal(m)) => return Err((n, m)),
            Err(CallError::Transient(m)) if n >= attempts => return Err((n, m)),
            Err(CallError::Transient(_)) => std::thread::sleep(backoff * n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HttpSettings {
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub timeout: Duration,
    pub attempts: u32,
    pub backoff: Duration,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

/// OpenAI-style `/chat/completions` endpoint.
pub struct RemoteChat {
    agent: Agent,
    settings: HttpSettings,
}

impl RemoteChat {
    pub fn new(settings: HttpSettings) -> Self {
        RemoteChat { agent: agent(settings.timeout), settings }
    }
}

impl CompletionBackend for RemoteChat {
    fn id(&self) -> String {
        format!("remote:{}", self.settings.model)
    }

    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        let s = &self.settings;
        let body = json!({
            "model": s.model,
            "temperature": TEMPERATURE,
            "messages": [{ "role": "user", "content": prompt.render() }],
        });
        let reply: ChatReply = with_retries(s.attempts, s.backoff, || post_json(&self.agent, &s.endpoint, Some(&s.api_key), &body))
            .map_err(|(attempts, message)| LlmError::BackendUnavailable { backend: self.id(), attempts, message })?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::BackendUnavailable { backend: self.id(), attempts: 1, message: "reply has no content".into() })
    }
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbeddingReply {
    data: Vec<EmbeddingDatum>,
}

/// OpenAI-style `/embeddings` endpoint. Answers are memoized per text, so
/// re-analysing a page after a submission costs no extra calls for text
/// that did not change.
pub struct RemoteEmbedder {
    agent: Agent,
    settings: HttpSettings,
    dims: usize,
    memo: Mutex<HashMap<String, EmbeddingVector>>,
}

impl RemoteEmbedder {
    pub fn new(settings: HttpSettings, dims: usize) -> Self {
        RemoteEmbedder { agent: agent(settings.timeout), settings, dims, memo: Mutex::new(HashMap::new()) }
    }
}

impl TextEmbedProvider for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.settings.model)
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if let Some(v) = self.memo.lock().unwrap_or_else(|p| p.into_inner()).get(text) {
            return Ok(v.clone());
        }
        let s = &self.settings;
        let body = json!({ "model": s.model, "input": text });
        let unavailable = |attempts, message| EmbedError::ProviderUnavailable { provider: self.id(), attempts, message };
        let reply: EmbeddingReply =
            with_retries(s.attempts, s.backoff, || post_json(&self.agent, &s.endpoint, Some(&s.api_key), &body))
                .map_err(|(n, m)| unavailable(n, m))?;
        let values = reply.data.into_iter().next().map(|d| d.embedding).unwrap_or_default();
        if values.len() != self.dims {
            return Err(EmbedError::DimensionMismatch { left: self.dims, right: values.len() });
        }
        let v = EmbeddingVector::new(values);
        self.memo.lock().unwrap_or_else(|p| p.into_inner()).insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// Drives a browser (or a served simulator) through the action protocol.
pub struct RemoteExecutor {
    agent: Agent,
    endpoint: String,
    session: String,
    current: Option<Page>,
}

impl RemoteExecutor {
    pub fn new(endpoint: &str, session: &str, timeout: Duration) -> Self {
        RemoteExecutor { agent: agent(timeout), endpoint: endpoint.to_string(), session: session.to_string(), current: None }
    }

    fn call(&self, action: Action, target: Option<&str>, value: Option<&str>) -> Result<Page, ExecutorError> {
        let req = ExecutorRequest {
            action,
            target: target.map(String::from),
            value: value.map(String::from),
            session: Some(self.session.clone()),
        };
        let transport = |m: String| ExecutorError::Transport(format!("{}: {m}", self.endpoint));
        let mut resp = self.agent.post(&self.endpoint).send_json(&req).map_err(|e| transport(e.to_string()))?;
        if resp.status().is_success() {
            let r: ExecutorResponse = resp.body_mut().read_json().map_err(|e| transport(e.to_string()))?;
            return Ok(Page { url: r.url, html: r.html });
        }
        let status = resp.status().as_u16();
        let e: ErrorResponse = resp.body_mut().read_json().map_err(|_| transport(format!("HTTP {status}")))?;
        Err(match e.kind {
            ErrorKind::Navigation => ExecutorError::Navigation { url: target.unwrap_or_default().into(), message: e.error },
            ErrorKind::UnknownField => ExecutorError::UnknownField(target.unwrap_or_default().into()),
            ErrorKind::NoPage => ExecutorError::NoPage,
            ErrorKind::BadRequest => transport(e.error),
        })
    }
}

impl Executor for RemoteExecutor {
    fn navigate(&mut self, url: &str) -> Result<Page, ExecutorError> {
        let page = self.call(Action::Navigate, Some(url), None)?;
        self.current = Some(page.clone());
        Ok(page)
    }

    fn fill(&mut self, field: &str, value: &str) -> Result<(), ExecutorError> {
        self.call(Action::Fill, Some(field), Some(value)).map(|_| ())
    }

    fn submit(&mut self) -> Result<Page, ExecutorError> {
        let page = self.call(Action::Submit, None, None)?;
        self.current = Some(page.clone());
        Ok(page)
    }

    fn page(&self) -> Result<Page, ExecutorError> {
        self.current.clone().ok_or(ExecutorError::NoPage)
    }
}
