//! Zero-shot classification through a chat-completions endpoint.
//!
//! One request per sentence, issued by a bounded pool of worker threads.
//! Transient failures (HTTP 429, 5xx, timeouts) are retried with exponential
//! backoff. Offline mock providers stand in for live endpoints in tests.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{BloomLabel, LabeledSentence, VerbLexicons};
use crate::evalkit::{compute_metrics, compute_metrics_partial, ConfusionMatrix, EvalError, MetricsReport};

pub const MAX_SENTENCE_CHARS: usize = 4000;
const MAX_BACKOFF_MS: u64 = 30_000;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("sentence is empty")]
    EmptySentence,
    #[error("sentence has {0} characters, more than the {MAX_SENTENCE_CHARS} allowed")]
    SentenceTooLong(usize),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("environment variable `{0}` holding the API token is not set")]
    AuthMissing(String),
    #[error("provider `{provider}` unavailable for sentence {id} after {attempts} attempt(s): {detail}")]
    ProviderUnavailable {
        provider: String,
        id: u32,
        attempts: u32,
        detail: String,
    },
    #[error("provider config: {0}")]
    Config(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// The free-text reply named no label (or named none as a whole word).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no Bloom label in response {0:?}")]
pub struct ParseFailure(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: String,
    pub system_text: String,
    /// User message with a `{sentence}` slot.
    pub user_pattern: String,
}

const BUNDLED_PROMPT: &str = include_str!("../data/prompts/zero_shot_v1.txt");
const SLOT: &str = "{sentence}";

impl PromptTemplate {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_PROMPT).expect("bundled prompt template is valid")
    }

    /// Parse the text asset: leading `#` comments and a `version:` line,
    /// then a `[system]` section and a `[user]` section.
    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let bad = |m: &str| LlmError::Template(m.to_string());
        let (head, rest) = text
            .split_once("[system]\n")
            .ok_or_else(|| bad("missing [system] section"))?;
        let (system, user) = rest
            .split_once("\n[user]\n")
            .ok_or_else(|| bad("missing [user] section"))?;
        let version = head
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .find_map(|l| l.trim().strip_prefix("version:"))
            .map(|v| v.trim().to_string())
            .ok_or_else(|| bad("missing version line"))?;
        let tmpl = PromptTemplate {
            version,
            system_text: system.trim_end().to_string(),
            user_pattern: user.trim_end().to_string(),
        };
        tmpl.validate()?;
        Ok(tmpl)
    }

    /// Every label named exactly once in the instructions, and a sentence slot.
    pub fn validate(&self) -> Result<(), LlmError> {
        for label in BloomLabel::ALL {
            let n = label_mentions(&self.system_text).filter(|(_, l)| *l == label).count();
            if n != 1 {
                return Err(LlmError::Template(format!(
                    "system text names {label} {n} times, expected exactly once"
                )));
            }
        }
        if !self.user_pattern.contains(SLOT) {
            return Err(LlmError::Template(format!("user pattern lacks the {SLOT} slot")));
        }
        Ok(())
    }

    /// SHA-256 over version and both sections, lowercase hex.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.version.as_bytes());
        h.update(b"\n[system]\n");
        h.update(self.system_text.as_bytes());
        h.update(b"\n[user]\n");
        h.update(self.user_pattern.as_bytes());
        hex::encode(h.finalize())
    }
}

/// `(system, user)` message texts for one sentence.
pub fn render_prompt(tmpl: &PromptTemplate, sentence: &str) -> Result<(String, String), LlmError> {
    if sentence.trim().is_empty() {
        return Err(LlmError::EmptySentence);
    }
    let n = sentence.chars().count();
    if n > MAX_SENTENCE_CHARS {
        return Err(LlmError::SentenceTooLong(n));
    }
    Ok((tmpl.system_text.clone(), tmpl.user_pattern.replace(SLOT, sentence)))
}

/// Whole-word, case-insensitive label mentions with their byte offsets.
fn label_mentions(text: &str) -> impl Iterator<Item = (usize, BloomLabel)> + '_ {
    text.split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| !w.is_empty())
        .filter_map(move |w| {
            let offset = w.as_ptr() as usize - text.as_ptr() as usize;
            BloomLabel::from_name(w).map(|l| (offset, l))
        })
}

/// The label a free-text reply settles on: the last canonical label name
/// appearing as a whole word.
pub fn parse_label(raw: &str) -> Result<BloomLabel, ParseFailure> {
    label_mentions(raw)
        .last()
        .map(|(_, l)| l)
        .ok_or_else(|| ParseFailure(raw.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model: &str, system: String, user: String, temperature: f64) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: system,
                },
                ChatMessage {
                    role: "user".into(),
                    content: user,
                },
            ],
            temperature,
        }
    }

    pub fn user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub content: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Worth retrying: rate limits, server errors, timeouts.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, ProviderError>;
}

/// Offline provider that answers with the level of the first Bloom action
/// verb found in the user message. Latency is reported as 0.
#[derive(Debug, Clone)]
pub struct MockProvider {
    lexicons: VerbLexicons,
}

impl MockProvider {
    pub fn new(lexicons: VerbLexicons) -> Self {
        MockProvider { lexicons }
    }
}

impl Default for MockProvider {
    fn default() -> Self {
        MockProvider::new(VerbLexicons::bundled())
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, ProviderError> {
        let text = request.user_text().to_lowercase();
        let label = text
            .split(|c: char| !c.is_ascii_alphanumeric())
            .find_map(|w| self.lexicons.label_of(w));
        let content = match label {
            Some(l) => format!("Bloom level: {l}"),
            None => "I cannot tell which level this is.".to_string(),
        };
        Ok(ChatReply { content, latency_ms: 0 })
    }
}

/// Offline provider whose every reply is unparseable.
#[derive(Debug, Clone, Default)]
pub struct UnparseableMockProvider;

impl ChatProvider for UnparseableMockProvider {
    fn complete(&self, _request: &ChatRequest) -> Result<ChatReply, ProviderError> {
        Ok(ChatReply {
            content: "banana".to_string(),
            latency_ms: 0,
        })
    }
}

/// Client for any endpoint speaking the chat-completions JSON schema.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
}

impl HttpProvider {
    pub fn new(endpoint: &str, token: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(format!("http client: {e}")))?;
        Ok(HttpProvider {
            client,
            endpoint: endpoint.to_string(),
            token,
        })
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: ChatMessage,
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, ProviderError> {
        let start = Instant::now();
        let mut req = self.client.post(&self.endpoint).json(request);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ProviderError::Fatal(format!("HTTP {status}: {body}")));
        }
        let body: CompletionBody = resp
            .json()
            .map_err(|e| ProviderError::Fatal(format!("malformed completion body: {e}")))?;
        let content = body
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::Fatal("completion has no choices".into()))?;
        Ok(ChatReply {
            content,
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Verb-keyword heuristic, offline.
    Mock,
    /// Always answers "banana", offline.
    MockUnparseable,
    /// Live chat-completions endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    /// Row label in reports.
    pub name: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub temperature: f64,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    5
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

impl ProviderConfig {
    pub fn mock(name: &str) -> Self {
        ProviderConfig {
            name: name.to_string(),
            kind: ProviderKind::Mock,
            endpoint: None,
            model: "mock".into(),
            auth_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_concurrency: default_concurrency(),
            temperature: 0.0,
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_concurrency == 0 {
            return Err(LlmError::Config(format!("{}: max_concurrency must be >= 1", self.name)));
        }
        if self.kind == ProviderKind::Http && self.endpoint.as_deref().unwrap_or("").is_empty() {
            return Err(LlmError::Config(format!(
                "{}: http provider needs an endpoint",
                self.name
            )));
        }
        Ok(())
    }

    /// Construct the provider. Live providers resolve their token here, so a
    /// missing variable fails before any request is sent.
    pub fn build(&self) -> Result<Box<dyn ChatProvider>, LlmError> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Mock => Box::new(MockProvider::default()),
            ProviderKind::MockUnparseable => Box::new(UnparseableMockProvider),
            ProviderKind::Http => {
                let token = match &self.auth_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| LlmError::AuthMissing(var.clone()))?),
                    None => None,
                };
                Box::new(HttpProvider::new(
                    self.endpoint.as_deref().unwrap_or_default(),
                    token,
                    Duration::from_secs(self.timeout_secs),
                )?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmVerdict {
    pub id: u32,
    pub raw: String,
    pub parsed: Option<BloomLabel>,
    pub latency_ms: u64,
    pub attempts: u32,
}

impl LlmVerdict {
    /// One JSON-lines record; `provider` is prepended when given.
    pub fn to_json_line(&self, provider: Option<&str>) -> String {
        let mut map = serde_json::Map::new();
        if let Some(p) = provider {
            map.insert("provider".into(), p.into());
        }
        let value = serde_json::to_value(self).expect("verdict serializes");
        if let serde_json::Value::Object(fields) = value {
            map.extend(fields);
        }
        serde_json::Value::Object(map).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub provider: String,
    pub model: String,
    pub prompt_version: String,
    pub prompt_hash: String,
    /// Parse failures counted as misclassifications.
    pub headline: MetricsReport,
    pub confusion: ConfusionMatrix,
    /// Metrics over parseable replies only; absent when nothing parsed.
    pub parseable_only: Option<MetricsReport>,
    pub parse_failures: usize,
}

/// Classify every sentence and score the replies. Verdicts come back in
/// sentence-id order, one per input sentence.
pub fn classify_zero_shot(
    corpus: &[LabeledSentence],
    tmpl: &PromptTemplate,
    provider: &dyn ChatProvider,
    cfg: &ProviderConfig,
) -> Result<(Vec<LlmVerdict>, ZeroShotReport), LlmError> {
    cfg.validate()?;
    let mut items: Vec<&LabeledSentence> = corpus.iter().collect();
    items.sort_by_key(|s| s.id);
    let requests = items
        .iter()
        .map(|s| {
            let (system, user) = render_prompt(tmpl, &s.text)?;
            Ok(ChatRequest::new(&cfg.model, system, user, cfg.temperature))
        })
        .collect::<Result<Vec<_>, LlmError>>()?;

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<LlmVerdict>>> = Mutex::new(vec![None; items.len()]);
    let failure: Mutex<Option<LlmError>> = Mutex::new(None);
    let workers = cfg.max_concurrency.min(items.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                match request_with_retry(provider, &requests[i], cfg) {
                    Ok((reply, attempts)) => {
                        let verdict = LlmVerdict {
                            id: items[i].id,
                            parsed: parse_label(&reply.content).ok(),
                            raw: reply.content,
                            latency_ms: reply.latency_ms,
                            attempts,
                        };
                        slots.lock().expect("verdict slots")[i] = Some(verdict);
                    }
                    Err((detail, attempts)) => {
                        abort.store(true, Ordering::Relaxed);
                        let mut f = failure.lock().expect("failure slot");
                        if f.is_none() {
                            *f = Some(LlmError::ProviderUnavailable {
                                provider: cfg.name.clone(),
                                id: items[i].id,
                                attempts,
                                detail,
                            });
                        }
                        break;
                    }
                }
            });
        }
    });
    if let Some(err) = failure.into_inner().expect("failure slot") {
        return Err(err);
    }
    let verdicts: Vec<LlmVerdict> = slots
        .into_inner()
        .expect("verdict slots")
        .into_iter()
        .map(|v| v.expect("every slot filled"))
        .collect();
    let report = score_verdicts(&items, &verdicts, tmpl, cfg)?;
    Ok((verdicts, report))
}

fn score_verdicts(
    items: &[&LabeledSentence],
    verdicts: &[LlmVerdict],
    tmpl: &PromptTemplate,
    cfg: &ProviderConfig,
) -> Result<ZeroShotReport, LlmError> {
    let y_true: Vec<BloomLabel> = items.iter().map(|s| s.label).collect();
    let y_pred: Vec<Option<BloomLabel>> = verdicts.iter().map(|v| v.parsed).collect();
    let (confusion, headline) = compute_metrics_partial(&y_true, &y_pred)?;
    let (t, p): (Vec<BloomLabel>, Vec<BloomLabel>) = y_true
        .iter()
        .zip(&y_pred)
        .filter_map(|(t, p)| p.map(|p| (*t, p)))
        .unzip();
    let parseable_only = if t.is_empty() {
        None
    } else {
        Some(compute_metrics(&t, &p)?.1)
    };
    Ok(ZeroShotReport {
        provider: cfg.name.clone(),
        model: cfg.model.clone(),
        prompt_version: tmpl.version.clone(),
        prompt_hash: tmpl.hash(),
        headline,
        confusion,
        parseable_only,
        parse_failures: y_pred.iter().filter(|p| p.is_none()).count(),
    })
}

/// Delay before retry number `retry` (1-based).
pub fn backoff_delay(base_ms: u64, retry: u32) -> Duration {
    let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
    Duration::from_millis(base_ms.saturating_mul(factor).min(MAX_BACKOFF_MS))
}

fn request_with_retry(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
    cfg: &ProviderConfig,
) -> Result<(ChatReply, u32), (String, u32)> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match provider.complete(request) {
            Ok(reply) => return Ok((reply, attempts)),
            Err(ProviderError::Transient(msg)) if attempts <= cfg.max_retries => {
                log_retry(&cfg.name, attempts, &msg);
                std::thread::sleep(backoff_delay(cfg.backoff_ms, attempts));
            }
            Err(e) => return Err((e.to_string(), attempts)),
        }
    }
}

fn log_retry(provider: &str, attempt: u32, msg: &impl fmt::Display) {
    eprintln!("[{provider}] attempt {attempt} failed ({msg}); backing off");
}
