//! Policy, completer and judge model clients.
//!
//! Prompts are rendered from a versioned template asset. Hosted models are
//! reached over the chat-completion JSON protocol; offline runs use
//! [`MockModel`] (fixture bank keyed by prompt hash) or the seeded
//! [`crate::synth::SyntheticPolicy`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::task_pool::PoolEntry;
use crate::trace::{ApiCatalog, Solution, TaskSpec};

pub const GENERATION_TEMPLATE: &str = include_str!("../assets/generation_prompt.txt");
pub const BUILTIN_EXEMPLAR: &str = include_str!("../assets/builtin_exemplar.txt");
pub const JUDGE_TEMPLATE: &str = include_str!("../assets/judge_prompt.txt");

pub const SYSTEM_PROMPT: &str = "You are a robot task planner. Decompose the task into subtasks and write one \
training supervision per subtask: primitive execution code or a reward function, each with a success condition.";

pub const DEFAULT_INSTRUCTIONS: &str = "\
Start with the scene configuration: one `object: name | asset id | scale | x, y, z` line per object and an \
`embodiment:` line.
Then list the subtasks in order. Each subtask starts with a `subtask N: <name>` line followed by exactly one \
fenced block tagged `primitive` or `reward`.
A primitive block assigns `rgbs, final_state` from a primitive API call and assigns `success`.
A reward block defines `_compute_reward(self)`, combines every `reward_*` component into `reward`, and returns \
`reward, success`.
Use only the available APIs and the exact object, link and joint names of the task specification.";

/// Reply used by [`MockModel`] for prompts missing from its bank.
pub const FALLBACK_REPLY: &str = "\
embodiment: franka

subtask 1: grasp the target object
```primitive
rgbs, final_state = grasp_object(self, \"object\")
success = check_grasped(self, \"object\")
```";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model unavailable: {0}")]
    Unavailable(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request timed out")]
    Timeout,
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("model configuration: {0}")]
    Config(String),
}

// ---------------------------------------------------------------------------
// Prompts

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub exemplars_used: Vec<String>,
    pub catalog_snapshot: Vec<String>,
}

impl PromptBundle {
    /// Key into mock fixture banks: hex SHA-256 of system, a unit separator
    /// (U+001F), then user.
    pub fn hash(&self) -> String {
        sha256_hex(format!("{}\u{1f}{}", self.system, self.user))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExemplarMode {
    /// Render the retrieved exemplars (possibly none).
    #[default]
    Pool,
    /// Ignore the pool and render the built-in exemplar.
    Builtin,
}

pub fn render_task_spec(task: &TaskSpec) -> String {
    let tree = &task.articulation_tree;
    let joints: Vec<String> = tree
        .joints
        .iter()
        .map(|j| format!("{} ({}, {} -> {})", j.name, j.joint_type, j.parent, j.child))
        .collect();
    let semantics: Vec<String> = task.link_semantics.iter().map(|(l, s)| format!("{l} = {s}")).collect();
    format!(
        "name: {}\ndescription: {}\nobject: {}\nlinks: {}\njoints: {}\nlink semantics: {}\nrelevant links: {}\nrelevant joints: {}\ninitial configuration: {}",
        task.name,
        task.description,
        task.object,
        tree.links.join(", "),
        joints.join(", "),
        semantics.join(", "),
        task.relevant_links.join(", "),
        task.relevant_joints.join(", "),
        task.initial_config,
    )
}

fn template_body() -> &'static str {
    GENERATION_TEMPLATE.split_once("----\n").map(|(_, body)| body).unwrap_or(GENERATION_TEMPLATE)
}

/// Renders the policy prompt. Exemplars are rendered in the order given,
/// which callers keep similarity-descending.
pub fn build_prompt(
    task: &TaskSpec,
    exemplars: &[PoolEntry],
    catalog: &ApiCatalog,
    instructions: &str,
    mode: ExemplarMode,
) -> PromptBundle {
    let (exemplar_text, used) = match mode {
        ExemplarMode::Builtin => (BUILTIN_EXEMPLAR.trim_end().to_string(), vec!["builtin".to_string()]),
        ExemplarMode::Pool if exemplars.is_empty() => ("(no similar tasks available)".to_string(), Vec::new()),
        ExemplarMode::Pool => {
            let sections: Vec<String> = exemplars
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    format!(
                        "### Similar task {}: {}\ndescription: {}\n{}",
                        i + 1,
                        e.task.name,
                        e.task.description,
                        e.solution.render()
                    )
                })
                .collect();
            (sections.join("\n\n"), exemplars.iter().map(|e| e.task.name.clone()).collect())
        }
    };
    let api_list = render_api_list(catalog);
    let user = template_body()
        .replace("{task_specification}", &render_task_spec(task))
        .replace("{exemplars}", &exemplar_text)
        .replace("{api_list}", &api_list)
        .replace("{instructions}", instructions)
        .trim_end()
        .to_string();
    PromptBundle {
        system: SYSTEM_PROMPT.to_string(),
        user,
        exemplars_used: used,
        catalog_snapshot: catalog.api_names(),
    }
}

fn render_api_list(catalog: &ApiCatalog) -> String {
    let join = |set: &std::collections::BTreeSet<String>| {
        if set.is_empty() {
            "(none)".to_string()
        } else {
            set.iter().cloned().collect::<Vec<_>>().join(", ")
        }
    };
    format!(
        "For primitive subtasks: {}\nFor reward subtasks: {}\nFor both: {}",
        join(&catalog.primitive_apis),
        join(&catalog.reward_apis),
        join(&catalog.shared)
    )
}

/// Prompt asking the completer to finish `base` after its first `j` subtasks.
pub fn build_completion_prompt(bundle: &PromptBundle, base: &Solution, j: usize) -> PromptBundle {
    let j = j.min(base.subtasks.len());
    let mut partial = base.clone();
    partial.subtasks.truncate(j);
    let user = format!(
        "{}\n\n## Partial solution\n{}\n\n## Continue\nContinue the solution from subtask {}. Output only the remaining \
subtasks in the same format, or nothing if the partial solution already completes the task.",
        bundle.user,
        partial.render(),
        j + 1
    );
    PromptBundle { user, ..bundle.clone() }
}

pub fn render_judge_prompt(task_description: &str, step_text: &str) -> String {
    JUDGE_TEMPLATE.replace("{task_description}", task_description).replace("{step_text}", step_text)
}

// ---------------------------------------------------------------------------
// Model handles

pub trait ModelClient: Send + Sync {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, ModelError>;
}

impl<M: ModelClient + ?Sized> ModelClient for Arc<M> {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, ModelError> {
        (**self).generate(bundle)
    }
}

/// Replays canned replies keyed by [`PromptBundle::hash`]. Replies for one
/// prompt are returned in bank order, wrapping around when exhausted; the
/// seed offsets the starting position. Unknown prompts go to the fallback
/// model if one is set, else get the fallback reply ([`FALLBACK_REPLY`]
/// unless overridden).
pub struct MockModel {
    bank: BTreeMap<String, Vec<String>>,
    cursors: Mutex<HashMap<String, usize>>,
    seed: u64,
    fallback: String,
    fallback_model: Option<Arc<dyn ModelClient>>,
    calls: AtomicUsize,
    misses: AtomicUsize,
}

impl MockModel {
    pub fn new(bank: BTreeMap<String, Vec<String>>, seed: u64) -> Result<Self, ModelError> {
        if bank.is_empty() || bank.values().any(Vec::is_empty) {
            return Err(ModelError::Config("fixture bank must be nonempty".into()));
        }
        Ok(MockModel {
            bank,
            cursors: Mutex::new(HashMap::new()),
            seed,
            fallback: FALLBACK_REPLY.to_string(),
            fallback_model: None,
            calls: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    /// Bank file: JSON object mapping hex prompt hashes to reply arrays.
    pub fn from_file(path: &Path, seed: u64) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        let bank = serde_json::from_str(&text)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        MockModel::new(bank, seed)
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = reply.into();
        self
    }

    pub fn with_fallback_model(mut self, model: Arc<dyn ModelClient>) -> Self {
        self.fallback_model = Some(model);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Calls answered with the fallback reply.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }
}

impl ModelClient for MockModel {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, ModelError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = bundle.hash();
        let Some(replies) = self.bank.get(&key) else {
            self.misses.fetch_add(1, Ordering::SeqCst);
            return match &self.fallback_model {
                Some(model) => model.generate(bundle),
                None => Ok(self.fallback.clone()),
            };
        };
        let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
        let cursor = cursors.entry(key).or_insert(0);
        let idx = (self.seed as usize).wrapping_add(*cursor) % replies.len();
        *cursor += 1;
        Ok(replies[idx].clone())
    }
}

// ---------------------------------------------------------------------------
// Chat-completion wire client

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => matches!(status, 408 | 429 | 500..=599),
            TransportError::Timeout | TransportError::Connect(_) => true,
            TransportError::Decode(_) => false,
        }
    }
}

/// Sends one JSON POST and returns the decoded JSON reply.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError>;
}

/// Blocking HTTP transport.
#[derive(Default)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<Value, TransportError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(TransportError::Status { status: status.as_u16(), body });
        }
        resp.json::<Value>().map_err(|e| TransportError::Decode(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub retries: u32,
    /// First backoff delay; doubles on every retry.
    pub backoff_ms: u64,
    /// Environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_concurrency: usize,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        ModelEndpoint {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "policy".into(),
            temperature: 0.7,
            max_tokens: 2048,
            timeout_ms: 60_000,
            retries: 3,
            backoff_ms: 500,
            api_key_env: None,
            max_concurrency: 4,
        }
    }
}

impl ModelEndpoint {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.timeout_ms == 0 {
            return Err(ModelError::Config("timeout must be positive".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(ModelError::Config("temperature must be non-negative".into()));
        }
        Ok(())
    }
}

/// Request body for one generation. Message content is the bundle text,
/// unmodified.
pub fn chat_request_body(endpoint: &ModelEndpoint, bundle: &PromptBundle) -> Value {
    let mut messages = Vec::new();
    if !bundle.system.is_empty() {
        messages.push(json!({ "role": "system", "content": bundle.system }));
    }
    messages.push(json!({ "role": "user", "content": bundle.user }));
    json!({
        "model": endpoint.model_name,
        "messages": messages,
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
    })
}

/// Bounds in-flight requests per endpoint.
pub struct ConcurrencyLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a ConcurrencyLimit);

impl ConcurrencyLimit {
    pub fn new(max: usize) -> Self {
        ConcurrencyLimit { max: max.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("limit lock poisoned");
        while *active >= self.max {
            active = self.freed.wait(active).expect("limit lock poisoned");
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("limit lock poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct ChatModel {
    pub endpoint: ModelEndpoint,
    transport: Arc<dyn Transport>,
    limit: ConcurrencyLimit,
    sleep: Sleeper,
    api_key: Option<String>,
}

impl ChatModel {
    /// Reads the API key from the endpoint's environment variable, if set.
    pub fn new(endpoint: ModelEndpoint, transport: Arc<dyn Transport>) -> Result<Self, ModelError> {
        endpoint.validate()?;
        let api_key = match &endpoint.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| ModelError::Auth(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let limit = ConcurrencyLimit::new(endpoint.max_concurrency);
        Ok(ChatModel { endpoint, transport, limit, sleep: Arc::new(std::thread::sleep), api_key })
    }

    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// Sends the bundle and returns the first choice's message content,
    /// retrying transient failures with exponential backoff.
    pub fn chat_generate(&self, bundle: &PromptBundle) -> Result<String, ModelError> {
        let url = format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'));
        let body = chat_request_body(&self.endpoint, bundle);
        let mut headers = Vec::new();
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let timeout = Duration::from_millis(self.endpoint.timeout_ms);
        let mut last = TransportError::Connect("no attempt made".into());
        for attempt in 0..=self.endpoint.retries {
            let result = {
                let _permit = self.limit.acquire();
                self.transport.post_json(&url, &headers, &body, timeout)
            };
            match result {
                Ok(reply) => return first_choice(&reply),
                Err(TransportError::Status { status: 401 | 403, body }) => return Err(ModelError::Auth(body)),
                Err(e) if !e.retryable() => {
                    return Err(match e {
                        TransportError::Status { status, body } => ModelError::Rejected { status, body },
                        other => ModelError::BadResponse(other.to_string()),
                    })
                }
                Err(e) => {
                    log::warn!("chat request attempt {} failed: {e}", attempt + 1);
                    last = e;
                    if attempt < self.endpoint.retries {
                        (self.sleep)(Duration::from_millis(self.endpoint.backoff_ms.saturating_mul(1 << attempt.min(16))));
                    }
                }
            }
        }
        Err(match last {
            TransportError::Timeout => ModelError::Timeout,
            other => ModelError::Unavailable(other.to_string()),
        })
    }
}

fn first_choice(reply: &Value) -> Result<String, ModelError> {
    reply["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| ModelError::BadResponse("no choices[0].message.content".into()))
}

impl ModelClient for ChatModel {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, ModelError> {
        self.chat_generate(bundle)
    }
}
