//! Model backends: an OpenAI-style chat-completions client and a scripted
//! mock that replays completions in call order.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::accounting::{count_tokens, Usage};
use crate::memory::Producer;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("script exhausted at call {0}")]
    Exhausted(usize),
    #[error("call {call}: prompt does not contain expected text {expected:?}")]
    ExpectationFailed { call: usize, expected: String },
    #[error("scripted failure at call {call}: {message}")]
    Scripted { call: usize, message: String },
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("http error: {0}")]
    Http(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("invalid script: {0}")]
    InvalidScript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: ChatRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: ChatRole::User, content: content.into() }
    }
}

/// Proxy token count of a prompt.
pub fn prompt_tokens(messages: &[Message]) -> u64 {
    messages.iter().map(|m| count_tokens(&m.content)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { temperature: 0.0, max_tokens: 4096 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
}

pub trait Backend: Send + Sync {
    /// Model name used for pricing.
    fn model(&self) -> &str;

    fn complete(&self, messages: &[Message], params: &SamplingParams) -> Result<Completion, BackendError>;
}

/// One scripted completion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(default = "default_role")]
    pub role: Producer,
    #[serde(default)]
    pub text: String,
    /// The rendered prompt must contain this text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    /// Fail this call instead of answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn default_role() -> Producer {
    Producer::Brain
}

impl ScriptEntry {
    pub fn brain(text: impl Into<String>) -> Self {
        ScriptEntry { role: Producer::Brain, text: text.into(), expect: None, error: None }
    }

    pub fn hand(text: impl Into<String>) -> Self {
        ScriptEntry { role: Producer::Hand, ..Self::brain(text) }
    }

    pub fn expecting(mut self, needle: impl Into<String>) -> Self {
        self.expect = Some(needle.into());
        self
    }

    pub fn failing(role: Producer, message: impl Into<String>) -> Self {
        ScriptEntry { role, text: String::new(), expect: None, error: Some(message.into()) }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawEntry {
    Text(String),
    Entry(ScriptEntry),
}

impl From<RawEntry> for ScriptEntry {
    fn from(raw: RawEntry) -> Self {
        match raw {
            RawEntry::Text(t) => ScriptEntry::brain(t),
            RawEntry::Entry(e) => e,
        }
    }
}

/// Scripted completions for both roles, in call order per role.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub brain: Vec<ScriptEntry>,
    pub hand: Vec<ScriptEntry>,
}

impl Script {
    pub fn from_entries(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut s = Script::default();
        for e in entries {
            match e.role {
                Producer::Hand => s.hand.push(e),
                _ => s.brain.push(e),
            }
        }
        s
    }

    /// Accepts either a JSON array or one JSON value per line. A bare string
    /// is a brain completion.
    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let trimmed = text.trim_start();
        let raw: Vec<RawEntry> = if trimmed.starts_with('[') {
            serde_json::from_str(trimmed).map_err(|e| BackendError::InvalidScript(e.to_string()))?
        } else {
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str(l).map_err(|e| BackendError::InvalidScript(format!("line {}: {e}", i + 1)))
                })
                .collect::<Result<_, _>>()?
        };
        Ok(Script::from_entries(raw.into_iter().map(ScriptEntry::from)))
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidScript(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn into_backends(self) -> (ScriptedBackend, ScriptedBackend) {
        (ScriptedBackend::new("mock-brain", self.brain), ScriptedBackend::new("mock-hand", self.hand))
    }
}

/// Replays completions in call order. Deterministic given the script.
#[derive(Debug)]
pub struct ScriptedBackend {
    model: String,
    entries: Vec<ScriptEntry>,
    next: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(model: impl Into<String>, entries: Vec<ScriptEntry>) -> Self {
        ScriptedBackend { model: model.into(), entries, next: AtomicUsize::new(0) }
    }

    pub fn from_texts<I, S>(model: &str, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(model, texts.into_iter().map(|t| ScriptEntry::brain(t)).collect())
    }

    pub fn calls_made(&self) -> usize {
        self.next.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.entries.len().saturating_sub(self.calls_made())
    }
}

impl Backend for ScriptedBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[Message], _params: &SamplingParams) -> Result<Completion, BackendError> {
        let call = self.next.fetch_add(1, Ordering::SeqCst);
        let entry = self.entries.get(call).ok_or(BackendError::Exhausted(call))?;
        if let Some(expected) = &entry.expect {
            if !messages.iter().any(|m| m.content.contains(expected.as_str())) {
                return Err(BackendError::ExpectationFailed { call, expected: expected.clone() });
            }
        }
        if let Some(message) = &entry.error {
            return Err(BackendError::Scripted { call, message: message.clone() });
        }
        Ok(Completion {
            text: entry.text.clone(),
            usage: Usage {
                prompt_tokens: prompt_tokens(messages),
                completion_tokens: count_tokens(&entry.text),
                reported: false,
            },
        })
    }
}

/// Wraps a backend and keeps every prompt it was sent.
#[derive(Debug)]
pub struct Recording<B> {
    inner: B,
    prompts: Mutex<Vec<Vec<Message>>>,
}

impl<B: Backend> Recording<B> {
    pub fn new(inner: B) -> Self {
        Recording { inner, prompts: Mutex::new(Vec::new()) }
    }

    pub fn prompts(&self) -> Vec<Vec<Message>> {
        self.prompts.lock().expect("poisoned").clone()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for Recording<B> {
    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, messages: &[Message], params: &SamplingParams) -> Result<Completion, BackendError> {
        self.prompts.lock().expect("poisoned").push(messages.to_vec());
        self.inner.complete(messages, params)
    }
}

/// Chat-completions client for OpenAI-compatible endpoints.
#[derive(Debug)]
pub struct HttpBackend {
    base_url: String,
    model: String,
    api_key: Option<String>,
    attempts: u32,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<ResponseUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ResponseUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| BackendError::Http(e.to_string()))?;
        Ok(HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            attempts: 3,
            client,
        })
    }

    /// Reads the key from `var`; fails if it is unset.
    pub fn from_env(base_url: impl Into<String>, model: impl Into<String>, var: &str) -> Result<Self, BackendError> {
        let key = std::env::var(var).map_err(|_| BackendError::MissingApiKey(var.to_string()))?;
        Self::new(base_url, model, Some(key))
    }

    pub fn with_attempts(mut self, attempts: u32) -> Self {
        self.attempts = attempts.max(1);
        self
    }

    fn send_once(&self, body: &ChatRequest<'_>) -> Result<Completion, (bool, BackendError)> {
        let mut req = self.client.post(format!("{}/chat/completions", self.base_url)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, BackendError::Http(e.to_string())))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.as_u16() == 429 || status.is_server_error();
            let text = resp.text().unwrap_or_default();
            return Err((retry, BackendError::Http(format!("{status}: {text}"))));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| (false, BackendError::Protocol(e.to_string())))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or((false, BackendError::Protocol("no choices in response".into())))?;
        let usage = match parsed.usage {
            Some(u) => Usage { prompt_tokens: u.prompt_tokens, completion_tokens: u.completion_tokens, reported: true },
            None => Usage {
                prompt_tokens: prompt_tokens(body.messages),
                completion_tokens: count_tokens(&text),
                reported: false,
            },
        };
        Ok(Completion { text, usage })
    }
}

impl Backend for HttpBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[Message], params: &SamplingParams) -> Result<Completion, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut last = None;
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 << attempt));
            }
            match self.send_once(&body) {
                Ok(c) => return Ok(c),
                Err((true, e)) => {
                    log::warn!("backend call failed (attempt {}): {e}", attempt + 1);
                    last = Some(e);
                }
                Err((false, e)) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| BackendError::Http("no attempts made".into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn ask(b: &dyn Backend, text: &str) -> Result<Completion, BackendError> {
        b.complete(&[Message::user(text)], &SamplingParams::default())
    }

    #[test]
    fn scripted_in_order_then_exhausted() {
        let b = ScriptedBackend::from_texts("m", ["one", "two"]);
        assert_eq!(ask(&b, "x").unwrap().text, "one");
        assert_eq!(ask(&b, "x").unwrap().text, "two");
        assert_eq!(ask(&b, "x"), Err(BackendError::Exhausted(2)));
    }

    #[test]
    fn scripted_expectation() {
        let b = ScriptedBackend::new("m", vec![ScriptEntry::brain("ok").expecting("needle")]);
        assert!(matches!(ask(&b, "haystack"), Err(BackendError::ExpectationFailed { call: 0, .. })));
        let b = ScriptedBackend::new("m", vec![ScriptEntry::brain("ok").expecting("needle")]);
        assert_eq!(ask(&b, "a needle here").unwrap().text, "ok");
    }

    #[test]
    fn scripted_usage_is_proxy() {
        let b = ScriptedBackend::from_texts("m", ["12345678"]);
        let c = ask(&b, "abcd").unwrap();
        assert_eq!(c.usage, Usage { prompt_tokens: 1, completion_tokens: 2, reported: false });
    }

    #[test]
    fn script_formats() {
        let jsonl = "\"plain\"\n{\"role\":\"hand\",\"text\":\"DONE: ok\"}\n\n{\"text\":\"b2\",\"expect\":\"x\"}\n";
        let s = Script::parse(jsonl).unwrap();
        assert_eq!(s.brain.len(), 2);
        assert_eq!(s.hand, vec![ScriptEntry::hand("DONE: ok")]);
        let arr = r#"["a", {"role": "hand", "text": "h"}]"#;
        assert_eq!(Script::parse(arr).unwrap(), s_with(&["a"], &["h"]));
        assert!(matches!(Script::parse("{\"bogus\": 1}"), Err(BackendError::InvalidScript(_))));
    }

    fn s_with(brain: &[&str], hand: &[&str]) -> Script {
        Script {
            brain: brain.iter().map(|t| ScriptEntry::brain(*t)).collect(),
            hand: hand.iter().map(|t| ScriptEntry::hand(*t)).collect(),
        }
    }

    #[test]
    fn recording_keeps_prompts() {
        let r = Recording::new(ScriptedBackend::from_texts("m", ["a"]));
        ask(&r, "hello").unwrap();
        assert_eq!(r.prompts()[0][0].content, "hello");
    }

    /// Serves one canned HTTP response and returns the raw request.
    fn one_shot_server(status: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let response = format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            reader.get_mut().write_all(response.as_bytes()).unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (addr, handle)
    }

    #[test]
    fn http_round_trip() {
        let (addr, server) = one_shot_server(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"ANALYSIS: hi"}}],"usage":{"prompt_tokens":11,"completion_tokens":3}}"#,
        );
        let b = HttpBackend::new(format!("{addr}/v1/"), "gpt-4o", Some("sk-test".into())).unwrap();
        let c = b.complete(&[Message::system("sys"), Message::user("u")], &SamplingParams::default()).unwrap();
        assert_eq!(c.text, "ANALYSIS: hi");
        assert_eq!(c.usage, Usage { prompt_tokens: 11, completion_tokens: 3, reported: true });
        let request = server.join().unwrap();
        assert!(request.starts_with("POST /v1/chat/completions"));
        assert!(request.to_ascii_lowercase().contains("authorization: bearer sk-test"));
        assert!(request.contains(r#""model":"gpt-4o""#));
        assert!(request.contains(r#"{"role":"system","content":"sys"}"#));
    }

    #[test]
    fn http_client_error_not_retried() {
        let (addr, server) = one_shot_server("400 Bad Request", r#"{"error":"bad"}"#);
        let b = HttpBackend::new(addr, "m", None).unwrap();
        let err = b.complete(&[Message::user("u")], &SamplingParams::default()).unwrap_err();
        assert!(matches!(err, BackendError::Http(ref m) if m.contains("400")), "{err}");
        server.join().unwrap();
    }

    #[test]
    fn missing_key() {
        let err = HttpBackend::from_env("http://x", "m", "TANDEM_TEST_UNSET_KEY_VAR").unwrap_err();
        assert_eq!(err, BackendError::MissingApiKey("TANDEM_TEST_UNSET_KEY_VAR".into()));
    }
}
