//! Pipeline configuration (TOML). Relative paths resolve against the
//! directory holding the config file.
//!
//! ```toml
//! seed = 7
//! tasks = "tasks.json"          # JSON array of task specifications
//! # catalog = "catalog.json"    # API allow-list, default built in
//!
//! [policy]
//! kind = "synthetic"            # synthetic | mock | chat
//! flaw_rate = 0.4               # synthetic only
//! # bank = "bank.json"          # mock: prompt-hash -> replies
//! # fallback = "synthetic"      # mock: model for prompts missing from the bank
//! # [policy.endpoint]           # chat: base_url, model_name, retries, ...
//!
//! [completer]                   # same keys as [policy]; defaults to it
//! [judge]                       # same keys; used by the `judge` command
//!
//! [embedder]
//! kind = "trigram"              # trigram | remote
//!
//! [pool]
//! path = "pool.jsonl"
//! top_k = 2
//! duplicate_policy = "replace"  # replace | reject
//! exemplars = "pool"            # pool | builtin
//!
//! [worlds]                      # optional world fixture per task name
//! "Fold Chair" = "fold_chair_world.json"
//!
//! [rollout]                     # n_base, completions_per_substep, branch_bases, mode, retries
//! [train]                       # learning_rate, weight_decay, warmup_steps, schedule, focal_gamma, ...
//! [evaluate]                    # strategies, threshold, test_fraction
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::model_io::{ChatModel, ExemplarMode, HttpTransport, MockModel, ModelClient, ModelEndpoint};
use crate::rollout::RolloutConfig;
use crate::scripted_env::ScriptedWorld;
use crate::synth::SyntheticPolicy;
use crate::task_pool::{DuplicatePolicy, Embedder, RemoteEmbedder, TrigramEmbedder, TRIGRAM_DIM};
use crate::trace::{ApiCatalog, TaskSpec};
use crate::verifier::{AggregationStrategy, Strategy, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Synthetic,
    Mock,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub flaw_rate: f64,
    pub bank: Option<PathBuf>,
    pub fallback: Option<ModelKind>,
    pub endpoint: Option<ModelEndpoint>,
    /// mock: reply for prompts missing from the bank when no fallback model is set.
    pub fallback_reply: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelKind::Synthetic, flaw_rate: 0.4, bank: None, fallback: None, endpoint: None, fallback_reply: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Trigram,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub base_url: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Trigram,
            dim: TRIGRAM_DIM,
            base_url: "http://localhost:8000/v1".into(),
            model: "encoder".into(),
            api_key_env: None,
            timeout_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExemplarSource {
    #[default]
    Pool,
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub path: PathBuf,
    pub top_k: usize,
    pub duplicate_policy: DuplicatePolicy,
    pub exemplars: ExemplarSource,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            path: PathBuf::from("pool.jsonl"),
            top_k: 2,
            duplicate_policy: DuplicatePolicy::Replace,
            exemplars: ExemplarSource::Pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub strategies: Vec<Strategy>,
    pub threshold: f64,
    pub test_fraction: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { strategies: Strategy::ALL.to_vec(), threshold: 0.5, test_fraction: 0.3 }
    }
}

impl EvaluateConfig {
    pub fn aggregation(&self) -> Vec<AggregationStrategy> {
        self.strategies.iter().map(|s| AggregationStrategy { variant: *s, threshold: self.threshold }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub tasks: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub policy: ModelConfig,
    pub completer: Option<ModelConfig>,
    /// Model behind the `judge` command; required only there.
    pub judge: Option<ModelConfig>,
    pub embedder: EmbedderConfig,
    pub pool: PoolConfig,
    pub worlds: BTreeMap<String, PathBuf>,
    pub rollout: RolloutConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
    /// Directory the config was loaded from.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            tasks: None,
            catalog: None,
            policy: ModelConfig::default(),
            completer: None,
            judge: None,
            embedder: EmbedderConfig::default(),
            pool: PoolConfig::default(),
            worlds: BTreeMap::new(),
            rollout: RolloutConfig::default(),
            train: TrainConfig::default(),
            evaluate: EvaluateConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::File { path: path.display().to_string(), message: e.to_string() }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| file_error(path, e))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.rollout.validate()?;
        self.train.validate()?;
        if self.pool.top_k == 0 {
            return Err(HarnessError::Config("pool.top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.evaluate.threshold) {
            return Err(HarnessError::Config("evaluate.threshold must lie in [0, 1]".into()));
        }
        if !(self.evaluate.test_fraction > 0.0 && self.evaluate.test_fraction < 1.0) {
            return Err(HarnessError::InvalidFraction(self.evaluate.test_fraction));
        }
        for m in std::iter::once(&self.policy).chain(&self.completer).chain(&self.judge) {
            if m.kind == ModelKind::Mock && m.bank.is_none() {
                return Err(HarnessError::Config("a mock model needs `bank`".into()));
            }
            if m.kind == ModelKind::Chat && m.endpoint.is_none() {
                return Err(HarnessError::Config("a chat model needs `endpoint`".into()));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn pool_path(&self) -> PathBuf {
        self.resolve(&self.pool.path)
    }

    pub fn exemplar_mode(&self) -> ExemplarMode {
        match self.pool.exemplars {
            ExemplarSource::Pool => ExemplarMode::Pool,
            ExemplarSource::Builtin => ExemplarMode::Builtin,
        }
    }

    pub fn load_tasks(&self) -> Result<Vec<TaskSpec>, HarnessError> {
        let path = self.tasks.as_ref().ok_or_else(|| HarnessError::Config("no `tasks` file configured".into()))?;
        let path = self.resolve(path);
        let text = std::fs::read_to_string(&path).map_err(|e| file_error(&path, e))?;
        let tasks: Vec<TaskSpec> = serde_json::from_str(&text).map_err(|e| file_error(&path, e))?;
        for t in &tasks {
            t.validate()?;
        }
        Ok(tasks)
    }

    pub fn load_catalog(&self) -> Result<ApiCatalog, HarnessError> {
        let Some(path) = &self.catalog else { return Ok(ApiCatalog::default()) };
        let path = self.resolve(path);
        let text = std::fs::read_to_string(&path).map_err(|e| file_error(&path, e))?;
        let catalog: ApiCatalog = serde_json::from_str(&text).map_err(|e| file_error(&path, e))?;
        catalog.validate()?;
        Ok(catalog)
    }

    /// The configured world fixture for the task, else one derived from it.
    pub fn world_for(&self, task: &TaskSpec) -> Result<ScriptedWorld, HarnessError> {
        match self.worlds.get(&task.name) {
            Some(p) => Ok(ScriptedWorld::load(&self.resolve(p))?),
            None => Ok(ScriptedWorld::for_task(task)),
        }
    }

    pub fn policy_model(&self, seed: u64) -> Result<Arc<dyn ModelClient>, HarnessError> {
        self.build_model(&self.policy, seed)
    }

    pub fn completer_model(&self, seed: u64) -> Result<Arc<dyn ModelClient>, HarnessError> {
        self.build_model(self.completer.as_ref().unwrap_or(&self.policy), seed.wrapping_add(1))
    }

    fn build_model(&self, m: &ModelConfig, seed: u64) -> Result<Arc<dyn ModelClient>, HarnessError> {
        Ok(match m.kind {
            ModelKind::Synthetic => Arc::new(SyntheticPolicy::new(seed, m.flaw_rate)),
            ModelKind::Mock => {
                let bank = self.resolve(m.bank.as_ref().expect("validated"));
                let mut mock = MockModel::from_file(&bank, 0)?;
                if let Some(reply) = &m.fallback_reply {
                    mock = mock.with_fallback(reply.clone());
                }
                if let Some(kind) = m.fallback {
                    let inner = ModelConfig { kind, ..m.clone() };
                    if kind == ModelKind::Mock {
                        return Err(HarnessError::Config("a mock fallback cannot itself be a mock".into()));
                    }
                    mock = mock.with_fallback_model(self.build_model(&inner, seed)?);
                }
                Arc::new(mock)
            }
            ModelKind::Chat => {
                let endpoint = m.endpoint.clone().expect("validated");
                Arc::new(ChatModel::new(endpoint, Arc::new(HttpTransport::default()))?)
            }
        })
    }

    pub fn judge_model(&self, seed: u64) -> Result<Arc<dyn ModelClient>, HarnessError> {
        let m = self.judge.as_ref().ok_or_else(|| HarnessError::Config("no [judge] model configured".into()))?;
        self.build_model(m, seed)
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>, HarnessError> {
        let e = &self.embedder;
        Ok(match e.kind {
            EmbedderKind::Trigram => Box::new(TrigramEmbedder::with_dim(e.dim)),
            EmbedderKind::Remote => {
                let api_key = match &e.api_key_env {
                    Some(var) => Some(
                        std::env::var(var)
                            .map_err(|_| HarnessError::Config(format!("environment variable {var} is not set")))?,
                    ),
                    None => None,
                };
                Box::new(RemoteEmbedder {
                    base_url: e.base_url.clone(),
                    model: e.model.clone(),
                    dim: e.dim,
                    timeout: Duration::from_millis(e.timeout_ms),
                    api_key,
                    transport: Arc::new(HttpTransport::default()),
                })
            }
        })
    }
}
