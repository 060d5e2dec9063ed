//! Chat-completions client, scripted offline stub and answer parsing.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::prompting::PromptBundle;

pub const DEFAULT_API_BASE: &str = "https://api.llm7.io/v1";
pub const ENV_API_KEY: &str = "DRIFTLENS_API_KEY";
pub const ENV_API_BASE: &str = "DRIFTLENS_API_BASE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

/// Identifies the caller of a request. Never sent over the wire; the stub
/// uses it to pick a scripted reply.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct RequestTag {
    /// Method id (`M5`) or debate role (`judge`).
    pub key: String,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    /// Conversation after the system prompt, starting with a user turn.
    pub turns: Vec<(ChatRole, String)>,
    pub temperature: f64,
    pub tag: RequestTag,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            system: system.into(),
            turns: vec![(ChatRole::User, user.into())],
            temperature: 0.0,
            tag: RequestTag::default(),
        }
    }

    pub fn from_bundle(model: &str, bundle: &PromptBundle, record_id: &str) -> ChatRequest {
        ChatRequest::new(model, bundle.system.clone(), bundle.user.clone()).tagged(&bundle.tag.to_string(), record_id)
    }

    pub fn tagged(mut self, key: &str, record_id: &str) -> ChatRequest {
        self.tag = RequestTag { key: key.to_string(), record_id: record_id.to_string() };
        self
    }

    pub fn with_turn(mut self, role: ChatRole, text: impl Into<String>) -> ChatRequest {
        self.turns.push((role, text.into()));
        self
    }

    /// The last user turn, which is what the stub and logs care about.
    pub fn last_user(&self) -> &str {
        self.turns
            .iter()
            .rev()
            .find(|(r, _)| *r == ChatRole::User)
            .map(|(_, t)| t.as_str())
            .unwrap_or("")
    }

    pub fn messages(&self) -> Vec<ChatMessage> {
        std::iter::once(ChatMessage { role: ChatRole::System, content: self.system.clone() })
            .chain(self.turns.iter().map(|(role, content)| ChatMessage { role: *role, content: content.clone() }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireReply {
    pub text: String,
    pub usage: Option<Usage>,
}

/// Failure of a single attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportFault {
    RateLimited { retry_after: Option<Duration> },
    Server { status: u16, message: String },
    Network(String),
    /// 401/403: retrying cannot help.
    Auth { status: u16 },
    /// Other client-side rejection, not retried.
    Rejected { status: Option<u16>, message: String },
}

impl TransportFault {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TransportFault::RateLimited { .. } | TransportFault::Server { .. } | TransportFault::Network(_))
    }

    fn status(&self) -> Option<u16> {
        match self {
            TransportFault::RateLimited { .. } => Some(429),
            TransportFault::Server { status, .. } | TransportFault::Auth { status } => Some(*status),
            TransportFault::Rejected { status, .. } => *status,
            TransportFault::Network(_) => None,
        }
    }
}

impl fmt::Display for TransportFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportFault::RateLimited { .. } => write!(f, "rate limited"),
            TransportFault::Server { status, message } => write!(f, "server error {status}: {message}"),
            TransportFault::Network(m) => write!(f, "network error: {m}"),
            TransportFault::Auth { status } => write!(f, "authentication failed ({status})"),
            TransportFault::Rejected { message, .. } => write!(f, "request rejected: {message}"),
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &ChatRequest) -> std::result::Result<WireReply, TransportFault>;

    /// Number of requests that actually left the process.
    fn network_requests(&self) -> u64 {
        0
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(30),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Wait before attempt `failed + 1`, after `failed` failures.
    pub fn delay_after(&self, failed: u32) -> Duration {
        let exp = self.multiplier.powi(failed.saturating_sub(1) as i32);
        let secs = (self.base_delay.as_secs_f64() * exp).min(self.max_delay.as_secs_f64());
        Duration::from_secs_f64(secs.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    pub latency: Duration,
    pub usage: Option<Usage>,
}

/// Running totals over all completions of a client.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    pub calls: u64,
    pub attempts: u64,
    pub latency_secs: f64,
    pub total_tokens: u64,
}

struct Gate {
    cap: usize,
    busy: Mutex<usize>,
    cv: Condvar,
}

struct GateGuard<'a>(&'a Gate);

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut busy = self.busy.lock().unwrap();
        while *busy >= self.cap {
            busy = self.cv.wait(busy).unwrap();
        }
        *busy += 1;
        GateGuard(self)
    }
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.busy.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

/// Shareable client with retries and a cap on in-flight requests.
pub struct LlmClient {
    transport: Arc<dyn Transport>,
    policy: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    gate: Gate,
    stats: Mutex<ClientStats>,
}

impl LlmClient {
    pub fn new(transport: Arc<dyn Transport>, policy: RetryPolicy, max_in_flight: usize) -> LlmClient {
        LlmClient {
            transport,
            policy,
            sleeper: Arc::new(ThreadSleeper),
            gate: Gate { cap: max_in_flight.max(1), busy: Mutex::new(0), cv: Condvar::new() },
            stats: Mutex::new(ClientStats::default()),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> LlmClient {
        self.sleeper = sleeper;
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.gate.cap
    }

    pub fn network_requests(&self) -> u64 {
        self.transport.network_requests()
    }

    pub fn stats(&self) -> ClientStats {
        *self.stats.lock().unwrap()
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<Completion> {
        let _slot = self.gate.enter();
        let start = Instant::now();
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.transport.send(req) {
                Ok(reply) => {
                    let latency = start.elapsed();
                    let mut s = self.stats.lock().unwrap();
                    s.calls += 1;
                    s.attempts += attempts as u64;
                    s.latency_secs += latency.as_secs_f64();
                    s.total_tokens += reply.usage.map(|u| u.total_tokens).unwrap_or(0);
                    return Ok(Completion { text: reply.text, attempts, latency, usage: reply.usage });
                }
                Err(TransportFault::Auth { status }) => {
                    return Err(Error::Config(format!(
                        "endpoint refused credentials (status {status}); check {ENV_API_KEY}"
                    )));
                }
                Err(fault) if fault.is_retryable() && attempts < self.policy.max_attempts => {
                    let mut wait = self.policy.delay_after(attempts);
                    if let TransportFault::RateLimited { retry_after: Some(ra) } = &fault {
                        wait = wait.max(*ra);
                    }
                    log::warn!("{} attempt {attempts} failed: {fault}; retrying in {wait:?}", req.tag.key);
                    self.sleeper.sleep(wait);
                }
                Err(fault) => {
                    self.stats.lock().unwrap().attempts += attempts as u64;
                    return Err(Error::Transport {
                        status: fault.status(),
                        message: format!("{fault} after {attempts} attempt(s)"),
                    });
                }
            }
        }
    }
}

/// `<base>/chat/completions` when the base already names the `/v1` root,
/// otherwise `<base>/v1/chat/completions`.
pub fn completions_url(base: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

/// OpenAI-compatible HTTP transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
    api_key: String,
    sent: AtomicU64,
}

impl HttpTransport {
    pub fn new(base: &str, api_key: impl Into<String>, timeout: Duration) -> Result<HttpTransport> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpTransport { client, url: completions_url(base), api_key: api_key.into(), sent: AtomicU64::new(0) })
    }

    /// Key from the environment; base from the environment, then `base`, then the default.
    pub fn from_env(base: Option<&str>, timeout: Duration) -> Result<HttpTransport> {
        let key = std::env::var(ENV_API_KEY)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| Error::Config(format!("{ENV_API_KEY} is not set")))?;
        let base = std::env::var(ENV_API_BASE)
            .ok()
            .filter(|b| !b.trim().is_empty())
            .or_else(|| base.map(str::to_string))
            .unwrap_or_else(|| DEFAULT_API_BASE.to_string());
        HttpTransport::new(&base, key, timeout)
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    temperature: f64,
}

fn parse_wire_reply(body: &str) -> std::result::Result<WireReply, TransportFault> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| TransportFault::Rejected { status: None, message: format!("malformed response: {e}") })?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportFault::Rejected { status: None, message: "response has no message content".into() })?
        .to_string();
    let usage = v.get("usage").and_then(|u| serde_json::from_value::<Usage>(u.clone()).ok());
    Ok(WireReply { text, usage })
}

impl Transport for HttpTransport {
    fn send(&self, req: &ChatRequest) -> std::result::Result<WireReply, TransportFault> {
        self.sent.fetch_add(1, Ordering::Relaxed);
        let body = WireRequest { model: &req.model, messages: req.messages(), temperature: req.temperature };
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| TransportFault::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|h| h.to_str().ok())
            .and_then(|s| s.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp.text().map_err(|e| TransportFault::Network(e.to_string()))?;
        match status {
            200..=299 => parse_wire_reply(&text),
            429 => Err(TransportFault::RateLimited { retry_after }),
            401 | 403 => Err(TransportFault::Auth { status }),
            500..=599 => Err(TransportFault::Server { status, message: snippet(&text) }),
            _ => Err(TransportFault::Rejected { status: Some(status), message: snippet(&text) }),
        }
    }

    fn network_requests(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(200).collect()
}

/// Replies for the scripted stub, as stored in a JSON file:
/// `{"default": "...", "keys": {"judge": ["..."]}, "records": {"M5": {"A.java": ["..."]}}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubScript {
    pub default: Option<String>,
    pub keys: BTreeMap<String, Vec<String>>,
    pub records: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

/// Offline transport that answers from a script and never touches the network.
///
/// Each (key, record) pair walks its reply list; the last reply repeats.
pub struct ScriptedStub {
    script: StubScript,
    cursors: Mutex<HashMap<(String, String), usize>>,
    faults: Mutex<VecDeque<TransportFault>>,
    log: Mutex<Vec<ChatRequest>>,
    calls: AtomicU64,
}

impl ScriptedStub {
    pub fn new(script: StubScript) -> ScriptedStub {
        ScriptedStub {
            script,
            cursors: Mutex::new(HashMap::new()),
            faults: Mutex::new(VecDeque::new()),
            log: Mutex::new(Vec::new()),
            calls: AtomicU64::new(0),
        }
    }

    pub fn constant(reply: impl Into<String>) -> ScriptedStub {
        ScriptedStub::new(StubScript { default: Some(reply.into()), ..Default::default() })
    }

    pub fn from_file(path: &Path) -> Result<ScriptedStub> {
        let text = std::fs::read_to_string(path)?;
        Ok(ScriptedStub::new(serde_json::from_str(&text)?))
    }

    /// Faults returned, in order, before any scripted reply.
    pub fn with_faults(self, faults: impl IntoIterator<Item = TransportFault>) -> ScriptedStub {
        self.faults.lock().unwrap().extend(faults);
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Every request seen so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }

    fn replies_for(&self, tag: &RequestTag) -> Option<(&[String], (String, String))> {
        if let Some(r) = self.script.records.get(&tag.key).and_then(|m| m.get(&tag.record_id)) {
            if !r.is_empty() {
                return Some((r, (tag.key.clone(), tag.record_id.clone())));
            }
        }
        if let Some(r) = self.script.keys.get(&tag.key) {
            if !r.is_empty() {
                return Some((r, (tag.key.clone(), tag.record_id.clone())));
            }
        }
        None
    }
}

impl Transport for ScriptedStub {
    fn send(&self, req: &ChatRequest) -> std::result::Result<WireReply, TransportFault> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.log.lock().unwrap().push(req.clone());
        if let Some(f) = self.faults.lock().unwrap().pop_front() {
            return Err(f);
        }
        let text = match self.replies_for(&req.tag) {
            Some((replies, cursor_key)) => {
                let mut cursors = self.cursors.lock().unwrap();
                let i = cursors.entry(cursor_key).or_insert(0);
                let text = replies[(*i).min(replies.len() - 1)].clone();
                *i += 1;
                text
            }
            None => self.script.default.clone().ok_or_else(|| TransportFault::Rejected {
                status: None,
                message: format!("no scripted reply for {} / {}", req.tag.key, req.tag.record_id),
            })?,
        };
        Ok(WireReply { text, usage: None })
    }
}

/// Which answer format the prompt asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    JsonShape,
    JudgeMarkers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsePath {
    Json,
    Marker,
    RegexFallback,
    Failed,
}

impl ParsePath {
    pub fn as_str(self) -> &'static str {
        match self {
            ParsePath::Json => "json",
            ParsePath::Marker => "marker",
            ParsePath::RegexFallback => "regex_fallback",
            ParsePath::Failed => "failed",
        }
    }
}

impl fmt::Display for ParsePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParsePath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "json" => Ok(ParsePath::Json),
            "marker" => Ok(ParsePath::Marker),
            "regex_fallback" => Ok(ParsePath::RegexFallback),
            "failed" => Ok(ParsePath::Failed),
            other => Err(Error::Data(format!("unknown parse path `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub label: Option<Label>,
    pub confidence: Option<f64>,
    pub explanation: Option<String>,
    pub parse_path: ParsePath,
}

impl ParsedPrediction {
    pub fn failed() -> ParsedPrediction {
        ParsedPrediction { label: None, confidence: None, explanation: None, parse_path: ParsePath::Failed }
    }
}

fn label_word(s: &str) -> Option<Label> {
    let t: String = s.chars().filter(|c| !matches!(c, '*' | '<' | '>' | '"' | '\'' | '[' | ']' | '`' | '.')).collect();
    match t.trim().to_ascii_lowercase().as_str() {
        "defective" | "1" => Some(Label::Defective),
        "benign" | "0" => Some(Label::Benign),
        _ => None,
    }
}

/// Percentages above 1 are scaled to a fraction; anything outside [0, 100] is dropped.
fn normalize_confidence(x: f64) -> Option<f64> {
    if !x.is_finite() || !(0.0..=100.0).contains(&x) {
        None
    } else if x > 1.0 {
        Some(x / 100.0)
    } else {
        Some(x)
    }
}

fn confidence_text(s: &str) -> Option<f64> {
    let t: String = s.chars().filter(|c| !matches!(c, '*' | '<' | '>' | '"' | '%' | '`')).collect();
    normalize_confidence(t.trim().parse::<f64>().ok()?)
}

fn parse_json(raw: &str) -> Option<ParsedPrediction> {
    let mut best = None;
    let mut i = 0;
    while let Some(off) = raw[i..].find('{') {
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(obj))) => {
                let end = start + stream.byte_offset();
                let label = obj.get("prediction").and_then(Value::as_str).and_then(label_word);
                if let Some(label) = label {
                    let confidence = match obj.get("confidence") {
                        Some(Value::Number(n)) => n.as_f64().and_then(normalize_confidence),
                        Some(Value::String(s)) => confidence_text(s),
                        _ => None,
                    };
                    best = Some(ParsedPrediction {
                        label: Some(label),
                        confidence,
                        explanation: obj.get("explanation").and_then(Value::as_str).map(str::to_string),
                        parse_path: ParsePath::Json,
                    });
                    i = end;
                    continue;
                }
                i = start + 1;
            }
            _ => i = start + 1,
        }
    }
    best
}

fn marker_value<'a>(raw: &'a str, marker: &str) -> Option<&'a str> {
    raw.lines().rev().find_map(|line| {
        let lower = line.to_ascii_lowercase();
        lower.find(marker).map(|p| &line[p + marker.len()..])
    })
}

fn parse_markers(raw: &str) -> Option<ParsedPrediction> {
    let label = label_word(marker_value(raw, "### final prediction:")?)?;
    let confidence = marker_value(raw, "### confidence:").and_then(confidence_text);
    Some(ParsedPrediction { label: Some(label), confidence, explanation: None, parse_path: ParsePath::Marker })
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Last standalone `defective`/`benign` token. A `non-` prefix disqualifies the token.
fn parse_fallback(raw: &str) -> Option<ParsedPrediction> {
    let lower = raw.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let mut last: Option<(usize, Label)> = None;
    for (word, label) in [("defective", Label::Defective), ("benign", Label::Benign)] {
        for (pos, _) in lower.match_indices(word) {
            let end = pos + word.len();
            let left_ok = pos == 0 || !is_word_byte(bytes[pos - 1]);
            let right_ok = end == bytes.len() || !is_word_byte(bytes[end]);
            let negated = lower[..pos].ends_with("non-");
            if left_ok && right_ok && !negated && last.is_none_or(|(p, _)| pos > p) {
                last = Some((pos, label));
            }
        }
    }
    last.map(|(_, label)| ParsedPrediction {
        label: Some(label),
        confidence: None,
        explanation: None,
        parse_path: ParsePath::RegexFallback,
    })
}

/// Extracts a label from a model answer. Never fails; an unusable answer
/// yields `ParsePath::Failed` with no label.
pub fn parse_prediction(raw: &str, expect: Expect) -> ParsedPrediction {
    let structured = match expect {
        Expect::JsonShape => parse_json(raw).or_else(|| parse_markers(raw)),
        Expect::JudgeMarkers => parse_markers(raw).or_else(|| parse_json(raw)),
    };
    structured.or_else(|| parse_fallback(raw)).unwrap_or_else(ParsedPrediction::failed)
}
