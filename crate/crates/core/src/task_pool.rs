//! Exemplar task pool: embed tasks, retrieve the most similar successful
//! tasks for a new one, and grow the pool as tasks succeed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model_io::Transport;
use crate::trace::{Solution, TaskSpec};

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("task name is empty")]
    EmptyName,
    #[error("pool is empty")]
    EmptyPool,
    #[error("solution for `{0}` was not successful")]
    NotSuccessful(String),
    #[error("task `{0}` is already in the pool")]
    DuplicateTask(String),
    #[error("pool file line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, PoolError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PoolError::NonFinite);
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(PoolError::ZeroNorm);
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, PoolError> {
        EmbeddingVector::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = PoolError;
    fn try_from(v: Vec<f64>) -> Result<Self, PoolError> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, PoolError> {
    if a.dim() != b.dim() {
        return Err(PoolError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(PoolError::ZeroNorm);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

// ---------------------------------------------------------------------------
// Embedders

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, PoolError>;
}

/// The text a task is embedded from: name, a newline, then the description.
pub fn task_text(name: &str, description: &str) -> String {
    format!("{name}\n{description}")
}

pub fn embed_task(name: &str, description: &str, embedder: &dyn Embedder) -> Result<EmbeddingVector, PoolError> {
    if name.trim().is_empty() {
        return Err(PoolError::EmptyName);
    }
    embedder.embed_text(&task_text(name, description))
}

pub const TRIGRAM_DIM: usize = 256;

/// Offline fallback encoder: character trigrams hashed with 64-bit FNV-1a
/// into `dim` buckets, counted, then L2-normalized. Texts shorter than three
/// characters form a single gram.
#[derive(Debug, Clone)]
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder { dim: TRIGRAM_DIM }
    }
}

impl TrigramEmbedder {
    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        TrigramEmbedder { dim }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for TrigramEmbedder {
    fn id(&self) -> String {
        format!("trigram-fnv1a-{}", self.dim)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, PoolError> {
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return Err(PoolError::ZeroNorm);
        }
        let mut counts = vec![0.0f64; self.dim];
        let mut bump = |gram: &[char]| {
            let s: String = gram.iter().collect();
            counts[(fnv1a64(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
        };
        if chars.len() < 3 {
            bump(&chars);
        } else {
            chars.windows(3).for_each(&mut bump);
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        EmbeddingVector::new(counts.into_iter().map(|c| c / norm).collect())
    }
}

/// Encoder behind an HTTP endpoint speaking the common embeddings protocol:
/// `POST {base_url}/embeddings {"model", "input"}` answered by
/// `{"data": [{"embedding": [...]}]}`.
pub struct RemoteEmbedder {
    pub base_url: String,
    pub model: String,
    pub dim: usize,
    pub timeout: Duration,
    pub api_key: Option<String>,
    pub transport: Arc<dyn Transport>,
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, PoolError> {
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        let mut headers = Vec::new();
        if let Some(key) = &self.api_key {
            headers.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        let body = json!({ "model": self.model, "input": text });
        let reply = self
            .transport
            .post_json(&url, &headers, &body, self.timeout)
            .map_err(|e| PoolError::EncoderUnavailable(e.to_string()))?;
        let values: Vec<f64> = reply["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| PoolError::EncoderUnavailable("response has no embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or(PoolError::NonFinite))
            .collect::<Result<_, _>>()?;
        if values.len() != self.dim {
            return Err(PoolError::DimensionMismatch { expected: self.dim, got: values.len() });
        }
        EmbeddingVector::new(values)
    }
}

// ---------------------------------------------------------------------------
// Pool

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub task: TaskSpec,
    pub embedding: EmbeddingVector,
    pub solution: Solution,
    pub inserted_at: u64,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    name: String,
    description: String,
    embedding: EmbeddingVector,
    solution: Solution,
    inserted_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<TaskSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DuplicatePolicy {
    /// Drop the old entry and append the new one.
    #[default]
    Replace,
    Reject,
}

#[derive(Debug, Clone)]
pub struct ExemplarPool {
    entries: Vec<PoolEntry>,
    dimension: usize,
    embedder_id: String,
    next_seq: u64,
    pub duplicate_policy: DuplicatePolicy,
}

impl ExemplarPool {
    pub fn new(dimension: usize, embedder_id: impl Into<String>) -> Self {
        ExemplarPool {
            entries: Vec::new(),
            dimension,
            embedder_id: embedder_id.into(),
            next_seq: 0,
            duplicate_policy: DuplicatePolicy::default(),
        }
    }

    pub fn for_embedder(embedder: &dyn Embedder) -> Self {
        ExemplarPool::new(embedder.dimension(), embedder.id())
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    /// Entries ranked by cosine similarity to `query`, most similar first,
    /// ties going to the earlier insertion. Returns `min(k, len)` entries.
    pub fn retrieve_top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(&PoolEntry, f64)>, PoolError> {
        if self.entries.is_empty() {
            return Err(PoolError::EmptyPool);
        }
        if query.dim() != self.dimension {
            return Err(PoolError::DimensionMismatch { expected: self.dimension, got: query.dim() });
        }
        let mut scored = self
            .entries
            .iter()
            .map(|e| cosine_similarity(query, &e.embedding).map(|w| (e, w)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|(ea, wa), (eb, wb)| wb.total_cmp(wa).then(ea.inserted_at.cmp(&eb.inserted_at)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Adds a successfully executed task.
    pub fn insert_on_success(&mut self, task: TaskSpec, solution: Solution, embedder: &dyn Embedder) -> Result<(), PoolError> {
        if solution.overall_success != Some(true) {
            return Err(PoolError::NotSuccessful(task.name));
        }
        let embedding = embed_task(&task.name, &task.description, embedder)?;
        self.insert_with_embedding(task, solution, embedding)
    }

    /// Adds an entry whose embedding was computed elsewhere (fixtures,
    /// persisted pools).
    pub fn insert_with_embedding(&mut self, task: TaskSpec, solution: Solution, embedding: EmbeddingVector) -> Result<(), PoolError> {
        if solution.overall_success != Some(true) {
            return Err(PoolError::NotSuccessful(task.name));
        }
        if embedding.dim() != self.dimension {
            return Err(PoolError::DimensionMismatch { expected: self.dimension, got: embedding.dim() });
        }
        if let Some(pos) = self
            .entries
            .iter()
            .position(|e| e.task.name == task.name && e.task.description == task.description)
        {
            match self.duplicate_policy {
                DuplicatePolicy::Reject => return Err(PoolError::DuplicateTask(task.name)),
                DuplicatePolicy::Replace => {
                    self.entries.remove(pos);
                }
            }
        }
        let inserted_at = self.next_seq;
        self.next_seq += 1;
        self.entries.push(PoolEntry { task, embedding, solution, inserted_at });
        Ok(())
    }

    /// Writes one JSON object per line.
    pub fn save(&self, path: &Path) -> Result<(), PoolError> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.entries {
            let line = EntryLine {
                name: e.task.name.clone(),
                description: e.task.description.clone(),
                embedding: e.embedding.clone(),
                solution: e.solution.clone(),
                inserted_at: e.inserted_at,
                task: Some(e.task.clone()),
            };
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, dimension: usize, embedder_id: impl Into<String>) -> Result<Self, PoolError> {
        let mut pool = ExemplarPool::new(dimension, embedder_id);
        for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: EntryLine =
                serde_json::from_str(&line).map_err(|source| PoolError::Parse { line: idx + 1, source })?;
            if parsed.embedding.dim() != dimension {
                return Err(PoolError::DimensionMismatch { expected: dimension, got: parsed.embedding.dim() });
            }
            let task = parsed.task.unwrap_or_else(|| TaskSpec::named(&parsed.name, &parsed.description));
            pool.next_seq = pool.next_seq.max(parsed.inserted_at + 1);
            pool.entries.push(PoolEntry {
                task,
                embedding: parsed.embedding,
                solution: parsed.solution,
                inserted_at: parsed.inserted_at,
            });
        }
        pool.entries.sort_by_key(|e| e.inserted_at);
        Ok(pool)
    }
}

/// A pool shared between concurrent retrievers and an inserting writer.
/// Readers see the pool either before or after an insertion, never between.
#[derive(Clone)]
pub struct SharedPool {
    inner: Arc<RwLock<ExemplarPool>>,
}

impl SharedPool {
    pub fn new(pool: ExemplarPool) -> Self {
        SharedPool { inner: Arc::new(RwLock::new(pool)) }
    }

    pub fn retrieve_top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(PoolEntry, f64)>, PoolError> {
        let guard = self.inner.read().expect("pool lock poisoned");
        Ok(guard.retrieve_top_k(query, k)?.into_iter().map(|(e, w)| (e.clone(), w)).collect())
    }

    pub fn insert_on_success(&self, task: TaskSpec, solution: Solution, embedder: &dyn Embedder) -> Result<(), PoolError> {
        // Embed outside the write lock so readers are not blocked on the encoder.
        let embedding = embed_task(&task.name, &task.description, embedder)?;
        self.inner.write().expect("pool lock poisoned").insert_with_embedding(task, solution, embedding)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("pool lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> ExemplarPool {
        self.inner.read().expect("pool lock poisoned").clone()
    }
}
