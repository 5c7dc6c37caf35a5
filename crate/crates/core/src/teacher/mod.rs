//! Teacher backends and reading-behavior synthesis.
//!
//! A [`Teacher`] wraps a [`TeacherBackend`] (the offline [`MockBackend`] or
//! the HTTP [`RemoteBackend`]) with retry and response validation. The
//! [`synthesize`] driver fans requests out to a bounded pool of workers and
//! writes records back in canonical order.

mod http;
mod mock;
mod synth;

pub use http::RemoteBackend;
pub use mock::{mock_task_answer, mock_teacher, ner_spans, MockBackend};
pub use synth::{synthesize, synthesize_into, BehaviorKey, SynthesisError, SynthesisSummary};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::time::Duration;

use crate::prompt::{
    render_teaching_prompt, PromptError, RenderedPrompt, TeachingTemplate,
    DEFAULT_PROMPT_BUDGET_CHARS,
};

/// Environment variable holding the bearer token for the remote teacher.
pub const TOKEN_ENV: &str = "BRD_TEACHER_TOKEN";
pub const DEFAULT_CHAT_PATH: &str = "/v1/chat/completions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BehaviorKind {
    #[serde(rename = "NER")]
    Ner,
    #[serde(rename = "QRA")]
    Qra,
}

impl BehaviorKind {
    pub const ALL: [BehaviorKind; 2] = [BehaviorKind::Ner, BehaviorKind::Qra];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorKind::Ner => "NER",
            BehaviorKind::Qra => "QRA",
        }
    }
}

impl fmt::Display for BehaviorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BehaviorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NER" => Ok(BehaviorKind::Ner),
            "QRA" => Ok(BehaviorKind::Qra),
            other => Err(format!("unknown behavior kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    Transport,
    Protocol,
    Empty,
    TooLong,
    Echo,
    /// The prompt could not be rendered (sentence over budget).
    Prompt,
    /// A task answer matched none of the candidates.
    Unmatched,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Transport => "transport",
            RejectReason::Protocol => "protocol",
            RejectReason::Empty => "empty",
            RejectReason::TooLong => "too_long",
            RejectReason::Echo => "echo",
            RejectReason::Prompt => "prompt",
            RejectReason::Unmatched => "unmatched",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "transport" => RejectReason::Transport,
            "protocol" => RejectReason::Protocol,
            "empty" => RejectReason::Empty,
            "too_long" => RejectReason::TooLong,
            "echo" => RejectReason::Echo,
            "prompt" => RejectReason::Prompt,
            "unmatched" => RejectReason::Unmatched,
            _ => return None,
        })
    }
}

/// Serialized as `"accepted"` or `"rejected:<reason>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Accepted,
    Rejected(RejectReason),
}

impl Status {
    pub fn is_accepted(self) -> bool {
        self == Status::Accepted
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Accepted => f.write_str("accepted"),
            Status::Rejected(r) => write!(f, "rejected:{}", r.as_str()),
        }
    }
}

impl Serialize for Status {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Status {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "accepted" {
            return Ok(Status::Accepted);
        }
        s.strip_prefix("rejected:")
            .and_then(RejectReason::parse)
            .map(Status::Rejected)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid status `{s}`")))
    }
}

/// One teacher response for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorRecord {
    pub passage_id: String,
    pub sentence_index: usize,
    pub kind: BehaviorKind,
    pub sentence: String,
    pub response: String,
    pub prompt_hash: String,
    pub teacher_id: String,
    pub status: Status,
}

impl BehaviorRecord {
    pub fn key(&self) -> BehaviorKey {
        BehaviorKey {
            passage_id: self.passage_id.clone(),
            sentence_index: self.sentence_index,
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub path: String,
    pub model: Option<String>,
    pub temperature: f64,
    pub max_tokens: usize,
    pub max_in_flight: usize,
    pub retry_limit: u32,
    pub backoff_base_ms: u64,
    pub timeout_s: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            backend: BackendKind::Mock,
            endpoint: None,
            path: DEFAULT_CHAT_PATH.to_string(),
            model: None,
            temperature: 0.0,
            max_tokens: 256,
            max_in_flight: 4,
            retry_limit: 3,
            backoff_base_ms: 500,
            timeout_s: 60,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("remote teacher needs an endpoint URL")]
    MissingEndpoint,
    #[error("remote teacher needs a model name")]
    MissingModel,
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("temperature must be a finite value >= 0")]
    Temperature,
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ConfigError::Temperature);
        }
        if self.max_tokens == 0 {
            return Err(ConfigError::NotPositive("max_tokens"));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::NotPositive("max_in_flight"));
        }
        if self.backend == BackendKind::Remote {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(ConfigError::MissingEndpoint);
            }
            if self.model.as_deref().is_none_or(str::is_empty) {
                return Err(ConfigError::MissingModel);
            }
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retry_limit: self.retry_limit,
            backoff_base: Duration::from_millis(self.backoff_base_ms),
        }
    }
}

/// What the teacher is asked to do.
#[derive(Debug, Clone, Copy)]
pub enum Request<'a> {
    Behavior {
        kind: BehaviorKind,
        sentence: &'a str,
        prompt: &'a RenderedPrompt,
    },
    Task {
        prompt: &'a RenderedPrompt,
        candidates: &'a [String],
    },
}

impl Request<'_> {
    pub fn prompt(&self) -> &RenderedPrompt {
        match self {
            Request::Behavior { prompt, .. } | Request::Task { prompt, .. } => prompt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallError {
    #[error("transport: {message}")]
    Transport { message: String, retryable: bool },
    #[error("protocol: {0}")]
    Protocol(String),
}

impl CallError {
    pub fn retryable(msg: impl Into<String>) -> Self {
        CallError::Transport {
            message: msg.into(),
            retryable: true,
        }
    }

    fn reason(&self) -> RejectReason {
        match self {
            CallError::Transport { .. } => RejectReason::Transport,
            CallError::Protocol(_) => RejectReason::Protocol,
        }
    }
}

/// A source of completions. Implementations must be shareable across the
/// synthesis worker threads.
pub trait TeacherBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &Request<'_>) -> Result<String, CallError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retry_limit: u32,
    pub backoff_base: Duration,
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): base * 2^attempt,
    /// capped at 30 s.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(16)).unwrap_or(u32::MAX);
        self.backoff_base
            .saturating_mul(factor)
            .min(Duration::from_secs(30))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationRules {
    /// Responses with more tokens than this are rejected as too long.
    pub max_tokens: usize,
}

impl Default for ValidationRules {
    fn default() -> Self {
        ValidationRules { max_tokens: 256 }
    }
}

/// Sets `record.status` from the response text. Transport and protocol
/// rejections are kept as they are.
pub fn validate_response(mut record: BehaviorRecord, rules: &ValidationRules) -> BehaviorRecord {
    if let Status::Rejected(
        RejectReason::Transport | RejectReason::Protocol | RejectReason::Prompt,
    ) = record.status
    {
        return record;
    }
    record.status = if record.response.trim().is_empty() {
        Status::Rejected(RejectReason::Empty)
    } else if crate::lm::tokenize(&record.response).len() > rules.max_tokens {
        Status::Rejected(RejectReason::TooLong)
    } else if record.response.trim() == record.sentence.trim() {
        Status::Rejected(RejectReason::Echo)
    } else {
        Status::Accepted
    };
    record
}

/// Identity of the sentence a behavior is requested for.
#[derive(Debug, Clone, Copy)]
pub struct SentenceRef<'a> {
    pub passage_id: &'a str,
    pub sentence_index: usize,
    pub sentence: &'a str,
}

/// The two teaching templates plus the prompt budget.
#[derive(Debug, Clone)]
pub struct TeachingTemplates {
    pub ner: TeachingTemplate,
    pub qra: TeachingTemplate,
    pub budget_chars: usize,
}

impl Default for TeachingTemplates {
    fn default() -> Self {
        TeachingTemplates {
            ner: TeachingTemplate::default_for(BehaviorKind::Ner),
            qra: TeachingTemplate::default_for(BehaviorKind::Qra),
            budget_chars: DEFAULT_PROMPT_BUDGET_CHARS,
        }
    }
}

impl TeachingTemplates {
    pub fn get(&self, kind: BehaviorKind) -> &TeachingTemplate {
        match kind {
            BehaviorKind::Ner => &self.ner,
            BehaviorKind::Qra => &self.qra,
        }
    }

    pub fn render(
        &self,
        kind: BehaviorKind,
        sentence: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        render_teaching_prompt(self.get(kind), sentence, self.budget_chars)
    }
}

/// Outcome of asking the teacher a task question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskAnswer {
    Answered(String),
    Rejected(RejectReason),
}

/// A backend plus retry, validation and concurrency settings.
pub struct Teacher {
    backend: Box<dyn TeacherBackend>,
    retry: RetryPolicy,
    rules: ValidationRules,
    max_in_flight: usize,
}

impl Teacher {
    pub fn from_config(config: &TeacherConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let backend: Box<dyn TeacherBackend> = match config.backend {
            BackendKind::Mock => Box::new(MockBackend),
            BackendKind::Remote => Box::new(RemoteBackend::from_config(config)?),
        };
        Ok(Teacher::with_backend(backend, config))
    }

    pub fn with_backend(backend: Box<dyn TeacherBackend>, config: &TeacherConfig) -> Self {
        Teacher {
            backend,
            retry: config.retry_policy(),
            rules: ValidationRules {
                max_tokens: config.max_tokens,
            },
            max_in_flight: config.max_in_flight.max(1),
        }
    }

    pub fn mock() -> Self {
        Teacher::with_backend(Box::new(MockBackend), &TeacherConfig::default())
    }

    pub fn id(&self) -> String {
        self.backend.id()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn rules(&self) -> &ValidationRules {
        &self.rules
    }

    fn call(&self, request: &Request<'_>) -> Result<String, CallError> {
        let mut attempt = 0;
        loop {
            match self.backend.complete(request) {
                Ok(text) => return Ok(text),
                Err(CallError::Transport {
                    ref message,
                    retryable: true,
                }) if attempt < self.retry.retry_limit => {
                    log::debug!("teacher call failed ({message}); retry {}", attempt + 1);
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Requests one behavior and returns the validated record.
    pub fn generate_behavior(
        &self,
        prompt: &RenderedPrompt,
        meta: SentenceRef<'_>,
        kind: BehaviorKind,
    ) -> BehaviorRecord {
        let request = Request::Behavior {
            kind,
            sentence: meta.sentence,
            prompt,
        };
        let (response, status) = match self.call(&request) {
            Ok(text) => (text, Status::Accepted),
            Err(e) => {
                log::warn!("{} {}#{}: {e}", kind, meta.passage_id, meta.sentence_index);
                (String::new(), Status::Rejected(e.reason()))
            }
        };
        let record = BehaviorRecord {
            passage_id: meta.passage_id.to_string(),
            sentence_index: meta.sentence_index,
            kind,
            sentence: meta.sentence.to_string(),
            response,
            prompt_hash: prompt.hash.clone(),
            teacher_id: self.id(),
            status,
        };
        validate_response(record, &self.rules)
    }

    /// Renders the teaching prompt for `meta` and requests the behavior.
    pub fn read_sentence(
        &self,
        templates: &TeachingTemplates,
        meta: SentenceRef<'_>,
        kind: BehaviorKind,
    ) -> BehaviorRecord {
        match templates.render(kind, meta.sentence) {
            Ok(prompt) => self.generate_behavior(&prompt, meta, kind),
            Err(e) => {
                log::warn!("{} {}#{}: {e}", kind, meta.passage_id, meta.sentence_index);
                BehaviorRecord {
                    passage_id: meta.passage_id.to_string(),
                    sentence_index: meta.sentence_index,
                    kind,
                    sentence: meta.sentence.to_string(),
                    response: String::new(),
                    prompt_hash: String::new(),
                    teacher_id: self.id(),
                    status: Status::Rejected(RejectReason::Prompt),
                }
            }
        }
    }

    /// Asks the teacher to answer a rendered task prompt and maps the reply
    /// onto one of `candidates`.
    pub fn answer_task(&self, prompt: &RenderedPrompt, candidates: &[String]) -> TaskAnswer {
        let request = Request::Task { prompt, candidates };
        match self.call(&request) {
            Ok(text) if text.trim().is_empty() => TaskAnswer::Rejected(RejectReason::Empty),
            Ok(text) => match match_candidate(&text, candidates) {
                Some(c) => TaskAnswer::Answered(c.to_string()),
                None => TaskAnswer::Rejected(RejectReason::Unmatched),
            },
            Err(e) => TaskAnswer::Rejected(e.reason()),
        }
    }
}

/// Lowercased alphanumeric words of `text`.
pub(crate) fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Start positions of `needle` as a whole-word sequence in `haystack`.
pub(crate) fn word_matches(haystack: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()] == *needle)
        .collect()
}

/// The candidate whose whole-word occurrence starts earliest in `response`;
/// at equal starts the longer candidate wins.
pub fn match_candidate<'c>(response: &str, candidates: &'c [String]) -> Option<&'c str> {
    let resp = words(response);
    candidates
        .iter()
        .filter_map(|c| {
            let cw = words(c);
            word_matches(&resp, &cw)
                .first()
                .map(|&pos| (pos, std::cmp::Reverse(cw.len()), c.as_str()))
        })
        .min_by_key(|&(pos, len, _)| (pos, len))
        .map(|(_, _, c)| c)
}
