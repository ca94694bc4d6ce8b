//! Token-budgeted prompt assembly and pluggable completion backends.
//!
//! A prompt is four sections (system, memory, knowledge, user), each preceded
//! by a fixed 32-character separator that costs exactly 8 tokens. The
//! assembled count is the sum of per-part token counts plus the separators.
//! Nothing is ever dropped to make a prompt fit: a prompt over budget is an
//! error and is never dispatched.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{count_tokens, ChunkRef, TokenSpan};

pub const SEPARATOR_TOKENS: usize = 8;
pub const SECTION_COUNT: usize = 4;
pub const DEFAULT_CONTEXT_LIMIT: usize = 14_000;
pub const DEFAULT_COMPLETION_RESERVE: usize = 1_000;

pub const SCRIPTED_BACKEND: &str = "scripted";
pub const REMOTE_HTTP_BACKEND: &str = "remote_http";

/// Section names in prompt order.
pub const SECTIONS: [&str; SECTION_COUNT] = ["SYSTEM", "MEMORY", "KNOWLEDGE", "USER"];

/// `\n=== NAME ====...\n`, exactly 32 characters.
pub fn separator(section: &str) -> String {
    let s = format!("\n{:=<30}\n", format!("=== {section} "));
    debug_assert_eq!(s.chars().count(), SEPARATOR_TOKENS * 4);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub context_limit: usize,
    pub completion_reserve: usize,
    /// Registered backend name.
    pub backend: String,
    /// Model identifier sent to remote backends.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub temperature: f64,
}

impl Default for ModelProfile {
    fn default() -> Self {
        Self::scripted()
    }
}

impl ModelProfile {
    pub fn scripted() -> Self {
        Self {
            name: "scripted".into(),
            context_limit: DEFAULT_CONTEXT_LIMIT,
            completion_reserve: DEFAULT_COMPLETION_RESERVE,
            backend: SCRIPTED_BACKEND.into(),
            model: None,
            temperature: 0.0,
        }
    }

    pub fn remote(model: impl Into<String>) -> Self {
        let model = model.into();
        Self {
            name: model.clone(),
            backend: REMOTE_HTTP_BACKEND.into(),
            model: Some(model),
            ..Self::scripted()
        }
    }

    /// Tokens available to the prompt.
    pub fn prompt_budget(&self) -> Result<usize, GatewayError> {
        match self.context_limit.checked_sub(self.completion_reserve) {
            Some(b) if b > 0 => Ok(b),
            _ => Err(GatewayError::InvalidProfile(format!(
                "context limit {} leaves no room after a {}-token completion reserve",
                self.context_limit, self.completion_reserve
            ))),
        }
    }
}

/// A retrieved chunk as it appears in the knowledge section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub chunk: ChunkRef,
    pub token_span: TokenSpan,
    pub text: String,
}

impl Passage {
    pub fn header(&self) -> String {
        format!(
            "[{} tokens {}-{}]",
            self.chunk, self.token_span.start, self.token_span.end
        )
    }

    /// Header line, text, trailing newline.
    pub fn render(&self) -> String {
        format!("{}\n{}\n", self.header(), self.text)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub memory_digest: String,
    pub retrieved: Vec<Passage>,
    pub user_turn: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPrompt {
    pub text: String,
    pub token_count: usize,
}

/// Flattens a bundle into prompt text and its budgeted token count.
pub fn assemble_prompt(bundle: &PromptBundle) -> AssembledPrompt {
    let entries: Vec<String> = bundle.retrieved.iter().map(Passage::render).collect();
    let token_count = count_tokens(&bundle.system_text)
        + count_tokens(&bundle.memory_digest)
        + entries.iter().map(|e| count_tokens(e)).sum::<usize>()
        + count_tokens(&bundle.user_turn)
        + SECTION_COUNT * SEPARATOR_TOKENS;

    let mut text = String::new();
    text.push_str(&separator(SECTIONS[0]));
    text.push_str(&bundle.system_text);
    text.push_str(&separator(SECTIONS[1]));
    text.push_str(&bundle.memory_digest);
    text.push_str(&separator(SECTIONS[2]));
    for e in &entries {
        text.push_str(e);
    }
    text.push_str(&separator(SECTIONS[3]));
    text.push_str(&bundle.user_turn);
    AssembledPrompt { text, token_count }
}

/// Splits an assembled prompt back into its four section bodies.
pub fn split_sections(prompt: &str) -> Option<[&str; SECTION_COUNT]> {
    let mut bounds = Vec::with_capacity(SECTION_COUNT);
    let mut from = 0;
    for name in SECTIONS {
        let sep = separator(name);
        let at = from + prompt[from..].find(&sep)?;
        bounds.push((at, at + sep.len()));
        from = at + sep.len();
    }
    if bounds[0].0 != 0 {
        return None;
    }
    Some([
        &prompt[bounds[0].1..bounds[1].0],
        &prompt[bounds[1].1..bounds[2].0],
        &prompt[bounds[2].1..bounds[3].0],
        &prompt[bounds[3].1..],
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub backend_name: String,
}

/// What a backend receives for one call.
pub struct CompletionRequest<'a> {
    pub prompt: &'a AssembledPrompt,
    pub bundle: &'a PromptBundle,
    pub profile: &'a ModelProfile,
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError>;
}

impl<F> CompletionBackend for F
where
    F: Fn(&CompletionRequest<'_>) -> Result<String, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        self(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum GatewayError {
    #[error("prompt of {count} tokens exceeds the {budget}-token budget")]
    ContextOversize { count: usize, budget: usize },
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("no backend registered under `{0}`")]
    UnknownBackend(String),
    #[error("a backend named `{0}` is already registered")]
    DuplicateBackend(String),
    #[error("invalid model profile: {0}")]
    InvalidProfile(String),
}

/// Backend registry plus budget enforcement.
#[derive(Default)]
pub struct Gateway {
    backends: HashMap<String, Arc<dyn CompletionBackend>>,
    dispatched: AtomicU64,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_backend(
        &mut self,
        name: impl Into<String>,
        backend: Arc<dyn CompletionBackend>,
    ) -> Result<(), GatewayError> {
        let name = name.into();
        if self.backends.contains_key(&name) {
            return Err(GatewayError::DuplicateBackend(name));
        }
        self.backends.insert(name, backend);
        Ok(())
    }

    pub fn has_backend(&self, name: &str) -> bool {
        self.backends.contains_key(name)
    }

    /// Number of prompts handed to a backend so far.
    pub fn dispatch_count(&self) -> u64 {
        self.dispatched.load(Ordering::Relaxed)
    }

    /// Assembles `bundle`, rejects it if it exceeds the profile's prompt
    /// budget (equality dispatches), otherwise calls the profile's backend.
    pub fn complete(
        &self,
        bundle: &PromptBundle,
        profile: &ModelProfile,
    ) -> Result<Completion, GatewayError> {
        let budget = profile.prompt_budget()?;
        let prompt = assemble_prompt(bundle);
        if prompt.token_count > budget {
            return Err(GatewayError::ContextOversize {
                count: prompt.token_count,
                budget,
            });
        }
        let backend = self
            .backends
            .get(&profile.backend)
            .ok_or_else(|| GatewayError::UnknownBackend(profile.backend.clone()))?;
        self.dispatched.fetch_add(1, Ordering::Relaxed);
        let text = backend.complete(&CompletionRequest {
            prompt: &prompt,
            bundle,
            profile,
        })?;
        Ok(Completion {
            completion_tokens: count_tokens(&text),
            text,
            prompt_tokens: prompt.token_count,
            backend_name: profile.backend.clone(),
        })
    }
}

pub const API_KEY_ENV: &str = "FORMULINK_API_KEY";
pub const API_BASE_ENV: &str = "FORMULINK_API_BASE";

/// OpenAI-style chat-completions client.
#[derive(Debug, Clone)]
pub struct RemoteHttpBackend {
    pub base_url: String,
    pub api_key: Option<String>,
    pub default_model: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub retry_spacing: Duration,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

impl RemoteHttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key,
            default_model: "gpt-4".into(),
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            retry_spacing: Duration::from_secs(1),
        }
    }

    /// Reads `FORMULINK_API_BASE` and `FORMULINK_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var(API_BASE_ENV).ok()?;
        Some(Self::new(base, std::env::var(API_KEY_ENV).ok()))
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn attempt(
        &self,
        client: &reqwest::blocking::Client,
        body: &ChatRequest<'_>,
    ) -> Result<String, (bool, GatewayError)> {
        let mut req = client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let unavailable = |message: String| GatewayError::BackendUnavailable {
            attempts: 1,
            message,
        };
        let resp = req.send().map_err(|e| (true, unavailable(e.to_string())))?;
        let status = resp.status();
        if !status.is_success() {
            let retriable = status.is_server_error() || status.as_u16() == 429;
            return Err((retriable, unavailable(format!("HTTP {status}"))));
        }
        let json: serde_json::Value = resp
            .json()
            .map_err(|e| (false, GatewayError::MalformedReply(e.to_string())))?;
        json.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| {
                (
                    false,
                    GatewayError::MalformedReply("missing choices[0].message.content".into()),
                )
            })
    }
}

impl CompletionBackend for RemoteHttpBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| GatewayError::BackendUnavailable {
                attempts: 0,
                message: e.to_string(),
            })?;
        let sections = split_sections(&request.prompt.text);
        let rest = match sections {
            Some(_) => {
                let sys_end = separator(SECTIONS[0]).len() + request.bundle.system_text.len();
                &request.prompt.text[sys_end..]
            }
            None => request.prompt.text.as_str(),
        };
        let body = ChatRequest {
            model: request.profile.model.as_deref().unwrap_or(&self.default_model),
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &request.bundle.system_text,
                },
                ChatMessage {
                    role: "user",
                    content: rest,
                },
            ],
            temperature: request.profile.temperature,
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&client, &body) {
                Ok(text) => return Ok(text),
                Err((retriable, err)) => {
                    if !retriable || attempts >= self.max_attempts {
                        return Err(match err {
                            GatewayError::BackendUnavailable { message, .. } => {
                                GatewayError::BackendUnavailable { attempts, message }
                            }
                            other => other,
                        });
                    }
                    std::thread::sleep(self.retry_spacing);
                }
            }
        }
    }
}
