//! Sampling `G` completions per problem from an OpenAI-compatible endpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Problem;
use crate::jsonl;
use crate::reward::CandidateOutput;

pub const QUESTION_PLACEHOLDER: &str = "{question}";

pub const DEFAULT_PROMPT_TEMPLATE: &str = "\
Below is an operations research problem. Build a mathematical model and solve it with Python.

Structure your answer with exactly these sections, in order:
## Mathematical Model:
## Decision Variables:
## Objective Function:
## Constraints:
## Python Code Solution Using `coptpy`:
followed by a single ```python fenced code block that builds the model with coptpy, solves it and prints the optimal objective value.

Problem:
{question}
";

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    /// Full URL of the chat-completions route.
    pub endpoint_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub group_size: usize,
    pub max_output_tokens: u32,
    pub request_timeout_s: f64,
    pub max_retries: u32,
    pub prompt_template: String,
    pub max_in_flight: usize,
    pub backoff_initial_ms: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "default".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.7,
            group_size: 8,
            max_output_tokens: 4096,
            request_timeout_s: 300.0,
            max_retries: 3,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
            max_in_flight: 8,
            backoff_initial_ms: 500,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::invalid(format!(
                "group size must be at least 2, got {}",
                self.group_size
            )));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.request_timeout_s.is_finite() && self.request_timeout_s > 0.0) {
            return Err(Error::invalid("request timeout must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight must be at least 1"));
        }
        if !self.prompt_template.contains(QUESTION_PLACEHOLDER) {
            return Err(Error::invalid(format!(
                "prompt template lacks the {QUESTION_PLACEHOLDER} placeholder"
            )));
        }
        Ok(())
    }

    pub fn render_prompt(&self, question: &str) -> String {
        self.prompt_template.replace(QUESTION_PLACEHOLDER, question)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestError {
    /// Worth retrying: network trouble, rate limits, server errors.
    Transient(String),
    /// Credentials rejected; no request can succeed.
    Auth(String),
    /// This request cannot succeed, but others might.
    Rejected(String),
}

/// A source of single chat completions.
pub trait ChatBackend: Sync {
    fn complete(&self, prompt: &str) -> std::result::Result<String, RequestError>;
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
    max_tokens: u32,
    n: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct HttpChatBackend {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: String,
    temperature: f64,
    max_tokens: u32,
}

impl HttpChatBackend {
    /// Reads the API key from the configured environment variable.
    pub fn from_config(cfg: &GenerationConfig) -> Result<Self> {
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            Error::Config(format!(
                "environment variable {} with the API key is not set",
                cfg.api_key_env
            ))
        })?;
        Ok(Self::new(cfg, api_key))
    }

    pub fn new(cfg: &GenerationConfig, api_key: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.request_timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: cfg.endpoint_url.clone(),
            model: cfg.model_name.clone(),
            api_key: api_key.into(),
            temperature: cfg.temperature,
            max_tokens: cfg.max_output_tokens,
        }
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, prompt: &str) -> std::result::Result<String, RequestError> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            n: 1,
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| RequestError::Transient(e.to_string()))?;

        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(RequestError::Auth(format!("HTTP {status}"))),
            408 | 409 | 425 | 429 | 500..=599 => {
                return Err(RequestError::Transient(format!("HTTP {status}")))
            }
            _ => return Err(RequestError::Rejected(format!("HTTP {status}"))),
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| RequestError::Transient(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| RequestError::Transient("response has no message content".into()))
    }
}

/// Calls the backend with exponential backoff. `Ok(None)` means retries were exhausted.
fn complete_with_retries(
    backend: &dyn ChatBackend,
    prompt: &str,
    cfg: &GenerationConfig,
) -> Result<Option<String>> {
    let mut delay = Duration::from_millis(cfg.backoff_initial_ms);
    for attempt in 0..=cfg.max_retries {
        match backend.complete(prompt) {
            Ok(text) => return Ok(Some(text)),
            Err(RequestError::Auth(msg)) => {
                return Err(Error::Config(format!("endpoint rejected credentials: {msg}")))
            }
            Err(RequestError::Rejected(_)) => return Ok(None),
            Err(RequestError::Transient(_)) if attempt < cfg.max_retries => {
                thread::sleep(delay);
                delay = (delay * 2).min(MAX_BACKOFF);
            }
            Err(RequestError::Transient(_)) => {}
        }
    }
    Ok(None)
}

/// Produces `G` candidates per problem, ordered by problem then slot.
///
/// Completed slots are appended to `journal` as they finish, and slots already
/// in the journal are not requested again. Slots whose retries run out come
/// back with empty text and stay out of the journal so a rerun retries them.
pub fn generate_candidates(
    problems: &[Problem],
    cfg: &GenerationConfig,
    backend: &dyn ChatBackend,
    journal: Option<&Path>,
) -> Result<Vec<CandidateOutput>> {
    cfg.validate()?;
    crate::eval::check_unique_ids(problems)?;

    let wanted: BTreeSet<&str> = problems.iter().map(|p| p.id.as_str()).collect();
    let mut done: BTreeMap<(String, usize), String> = BTreeMap::new();
    if let Some(path) = journal.filter(|p| p.exists()) {
        for row in jsonl::read::<CandidateOutput>(path)? {
            if wanted.contains(row.problem_id.as_str()) && row.slot < cfg.group_size {
                done.insert((row.problem_id, row.slot), row.text);
            }
        }
    }

    let pending: Vec<(&Problem, usize)> = problems
        .iter()
        .flat_map(|p| (0..cfg.group_size).map(move |slot| (p, slot)))
        .filter(|(p, slot)| !done.contains_key(&(p.id.clone(), *slot)))
        .collect();

    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let fatal: Mutex<Option<Error>> = Mutex::new(None);
    let fresh: Mutex<BTreeMap<(String, usize), String>> = Mutex::new(BTreeMap::new());
    let journal_lock = Mutex::new(());

    thread::scope(|scope| {
        for _ in 0..cfg.max_in_flight.min(pending.len()) {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((problem, slot)) = pending.get(i) else { break };
                let prompt = cfg.render_prompt(&problem.question);
                let text = match complete_with_retries(backend, &prompt, cfg) {
                    Ok(Some(text)) => {
                        if let Some(path) = journal {
                            let row = CandidateOutput {
                                problem_id: problem.id.clone(),
                                slot: *slot,
                                text: text.clone(),
                            };
                            let _guard = journal_lock.lock().expect("journal lock");
                            if let Err(e) = jsonl::append(path, &row) {
                                abort.store(true, Ordering::Relaxed);
                                fatal.lock().expect("fatal lock").get_or_insert(e);
                                break;
                            }
                        }
                        text
                    }
                    Ok(None) => String::new(),
                    Err(e) => {
                        abort.store(true, Ordering::Relaxed);
                        fatal.lock().expect("fatal lock").get_or_insert(e);
                        break;
                    }
                };
                fresh
                    .lock()
                    .expect("results lock")
                    .insert((problem.id.clone(), *slot), text);
            });
        }
    });

    if let Some(e) = fatal.into_inner().expect("fatal lock") {
        return Err(e);
    }
    done.extend(fresh.into_inner().expect("results lock"));

    Ok(problems
        .iter()
        .flat_map(|p| {
            let done = &done;
            (0..cfg.group_size).map(move |slot| CandidateOutput {
                problem_id: p.id.clone(),
                slot,
                text: done.get(&(p.id.clone(), slot)).cloned().unwrap_or_default(),
            })
        })
        .collect())
}
