//! Process verifier: prefix features, focal-loss logistic scorer,
//! score aggregation, best-of-n selection and the judge baseline.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::inspect::inspect;
use crate::model_io::{render_judge_prompt, ModelClient, ModelError, PromptBundle, Transport};
use crate::rollout::LabeledPrefix;
use crate::task_pool::fnv1a64;
use crate::trace::{validate_apis, ApiCatalog, Subtask, TaskSpec, TracePrefix, Variant};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

pub const SCHEMA_V1: &str = "v1";
pub const ENGINEERED_FEATURES: usize = 10;
pub const BIGRAM_BUCKETS: usize = 16;
pub const FEATURE_DIM_V1: usize = ENGINEERED_FEATURES + BIGRAM_BUCKETS;

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("feature schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("probability {0} outside (0, 1)")]
    DomainError(f64),
    #[error("training data holds a single label value")]
    SingleClass,
    #[error("training data is empty")]
    EmptyData,
    #[error("loss became non-finite at step {0}")]
    NonFinite(usize),
    #[error("no scores to aggregate")]
    EmptyScores,
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("no candidates")]
    EmptyCandidates,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown strategy {0:?} (expected mean, geomean, min, max or last)")]
    UnknownStrategy(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("judge reply has no leading score in [0, 1]: {0:?}")]
    UnparseableReply(String),
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Features

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_id: String,
}

pub trait Featurizer: Send + Sync {
    fn schema_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn featurize(&self, task: &TaskSpec, prefix: &TracePrefix) -> FeatureVector;
}

/// Schema v1. Engineered features, in order:
///
/// 0. prefix length `m`
/// 1. fraction of subtasks whose calls pass the catalog check
/// 2. number of out-of-catalog identifiers
/// 3. fraction of referenced links/joints present in the articulation tree
/// 4. last subtask assigns `success`
/// 5. fraction of primitive subtasks
/// 6. fraction of subtasks assigning `success`
/// 7. fraction of referenced objects present in the scene
/// 8. fraction of subtasks with a hard-coded joint target
/// 9. fraction of structurally sound subtasks
///
/// followed by a bag of hashed word bigrams of the subtask names, divided by `m`.
#[derive(Debug, Clone, Default)]
pub struct SchemaV1 {
    pub catalog: ApiCatalog,
}

impl SchemaV1 {
    pub fn new(catalog: ApiCatalog) -> Self {
        SchemaV1 { catalog }
    }
}

impl Featurizer for SchemaV1 {
    fn schema_id(&self) -> &str {
        SCHEMA_V1
    }

    fn dim(&self) -> usize {
        FEATURE_DIM_V1
    }

    fn featurize(&self, task: &TaskSpec, prefix: &TracePrefix) -> FeatureVector {
        featurize(task, prefix, &self.catalog)
    }
}

pub fn featurize(task: &TaskSpec, prefix: &TracePrefix, catalog: &ApiCatalog) -> FeatureVector {
    let m = prefix.subtasks.len();
    let mf = m.max(1) as f64;
    let tree = &task.articulation_tree;
    let scene_objects: Vec<&str> = prefix.scene.objects.iter().map(|o| o.name.as_str()).collect();

    let (mut valid, mut offending, mut primitive, mut success, mut magic, mut sound) = (0, 0, 0, 0, 0, 0);
    let (mut parts, mut parts_ok, mut objects, mut objects_ok) = (0, 0, 0, 0);
    let mut last_success = false;
    for sub in &prefix.subtasks {
        let sup = &sub.supervision;
        let report = validate_apis(sup, catalog);
        valid += usize::from(report.ok);
        offending += report.offending.len();
        primitive += usize::from(sup.variant == Variant::Primitive);
        let ins = inspect(sup, catalog);
        success += usize::from(ins.has_success);
        last_success = ins.has_success;
        magic += usize::from(!ins.magic_targets.is_empty());
        sound += usize::from(ins.structurally_sound(sup.variant));
        for r in &ins.references {
            objects += 1;
            objects_ok += usize::from(scene_objects.contains(&r.object.as_str()) || r.object == task.object);
            if let Some(p) = &r.part {
                parts += 1;
                parts_ok += usize::from(tree.has_link(p) || tree.has_joint(p));
            }
        }
    }
    let frac = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };

    let mut values = vec![
        m as f64,
        valid as f64 / mf,
        offending as f64,
        frac(parts_ok, parts),
        f64::from(u8::from(last_success)),
        primitive as f64 / mf,
        success as f64 / mf,
        frac(objects_ok, objects),
        magic as f64 / mf,
        sound as f64 / mf,
    ];
    let mut buckets = [0.0; BIGRAM_BUCKETS];
    for sub in &prefix.subtasks {
        for gram in name_bigrams(&sub.name) {
            buckets[(fnv1a64(gram.as_bytes()) % BIGRAM_BUCKETS as u64) as usize] += 1.0;
        }
    }
    values.extend(buckets.iter().map(|b| b / mf));
    FeatureVector { values, schema_id: SCHEMA_V1.to_string() }
}

/// Adjacent lowercase word pairs; a one-word name yields the word itself.
fn name_bigrams(name: &str) -> Vec<String> {
    let words: Vec<String> = name
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect();
    match words.len() {
        0 => Vec::new(),
        1 => words,
        _ => words.windows(2).map(|w| format!("{} {}", w[0], w[1])).collect(),
    }
}

// ---------------------------------------------------------------------------
// Loss

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// label 1: `-alpha (1-p)^gamma ln p`; label 0: `-(1-alpha) p^gamma ln(1-p)`.
pub fn focal_bce_loss(p: f64, label: u8, gamma: f64, alpha: f64) -> Result<f64, VerifierError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(VerifierError::DomainError(p));
    }
    Ok(focal_unchecked(p, label, gamma, alpha))
}

fn focal_unchecked(p: f64, label: u8, gamma: f64, alpha: f64) -> f64 {
    if label == 1 {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Derivative of the focal loss with respect to the logit `z`, `p = sigmoid(z)`.
pub fn focal_bce_grad_logit(p: f64, label: u8, gamma: f64, alpha: f64) -> f64 {
    if label == 1 {
        alpha * (1.0 - p).powf(gamma) * (gamma * p * p.ln() - (1.0 - p))
    } else {
        (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * (1.0 - p).ln())
    }
}

/// Weighted mean focal loss of a logistic model and its gradient with
/// respect to `(weights, bias)`. `counts` weights each row (`None` = 1 each).
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    xs: &[Vec<f64>],
    labels: &[u8],
    counts: Option<&[f64]>,
    gamma: f64,
    alpha: f64,
) -> (f64, Vec<f64>, f64) {
    const CHUNK: usize = 256;
    let dim = weights.len();
    let total: f64 = counts.map(|c| c.iter().sum()).unwrap_or(xs.len() as f64);
    let partials: Vec<(f64, Vec<f64>, f64)> = (0..xs.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut loss = 0.0;
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for r in chunk * CHUNK..((chunk + 1) * CHUNK).min(xs.len()) {
                let c = counts.map_or(1.0, |c| c[r]);
                let z = bias + dot(weights, &xs[r]);
                let p = clamp_prob(sigmoid(z));
                loss += c * focal_unchecked(p, labels[r], gamma, alpha);
                let g = c * focal_bce_grad_logit(p, labels[r], gamma, alpha);
                for (gwi, xi) in gw.iter_mut().zip(&xs[r]) {
                    *gwi += g * xi;
                }
                gb += g;
            }
            (loss, gw, gb)
        })
        .collect();
    // reduce in chunk order so results do not depend on thread scheduling
    let mut loss = 0.0;
    let mut gw = vec![0.0; dim];
    let mut gb = 0.0;
    for (l, w, b) in partials {
        loss += l;
        gw.iter_mut().zip(&w).for_each(|(a, b)| *a += b);
        gb += b;
    }
    gw.iter_mut().for_each(|g| *g /= total);
    (loss / total, gw, gb / total)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    pub focal_gamma: f64,
    /// `None` uses the positive-label prevalence of the training data.
    pub focal_alpha: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            weight_decay: 0.005,
            warmup_steps: 100,
            schedule: Schedule::Cosine,
            focal_gamma: 2.0,
            focal_alpha: None,
            epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), VerifierError> {
        let bad = |m: &str| Err(VerifierError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.focal_gamma >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("focal_gamma and weight_decay must be non-negative");
        }
        if let Some(a) = self.focal_alpha {
            if !(a > 0.0 && a < 1.0) {
                return bad("focal_alpha must lie in (0, 1)");
            }
        }
        Ok(())
    }

    /// Learning rate for 0-based step `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        if t < self.warmup_steps {
            return self.learning_rate * (t + 1) as f64 / self.warmup_steps as f64;
        }
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let span = self.epochs.saturating_sub(self.warmup_steps).max(1) as f64;
                let progress = (t - self.warmup_steps) as f64 / span;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierParams {
    pub schema_id: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub training_meta: TrainingMeta,
}

impl VerifierParams {
    pub fn zeros(schema_id: impl Into<String>, dim: usize) -> Self {
        VerifierParams {
            schema_id: schema_id.into(),
            weights: vec![0.0; dim],
            bias: 0.0,
            training_meta: TrainingMeta { epochs: 0, final_loss: f64::NAN },
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), VerifierError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VerifierError> {
        let p: VerifierParams = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if p.weights.iter().chain([&p.bias]).any(|v| !v.is_finite()) {
            return Err(VerifierError::NonFinite(0));
        }
        Ok(p)
    }

    pub fn logit(&self, features: &FeatureVector) -> Result<f64, VerifierError> {
        if features.schema_id != self.schema_id || features.values.len() != self.weights.len() {
            return Err(VerifierError::SchemaMismatch {
                expected: format!("{} ({} features)", self.schema_id, self.weights.len()),
                found: format!("{} ({} features)", features.schema_id, features.values.len()),
            });
        }
        Ok(self.bias + dot(&self.weights, &features.values))
    }
}

/// Full-batch gradient descent on standardized features; the returned
/// weights act on raw features.
///
/// Identical (features, label) rows are merged into one weighted row, so
/// duplicating every record leaves the result unchanged bit for bit.
pub fn train(
    data: &[LabeledPrefix],
    tasks: &HashMap<String, TaskSpec>,
    featurizer: &dyn Featurizer,
    cfg: &TrainConfig,
) -> Result<VerifierParams, VerifierError> {
    let rows: Vec<Vec<f64>> = data
        .par_iter()
        .map(|r| {
            let fallback;
            let task = match tasks.get(&r.task_name) {
                Some(t) => t,
                None => {
                    fallback = TaskSpec::named(r.task_name.clone(), "");
                    &fallback
                }
            };
            featurizer.featurize(task, &r.prefix()).values
        })
        .collect();
    let labels: Vec<u8> = data.iter().map(|r| r.label).collect();
    train_on_features(&rows, &labels, featurizer.schema_id(), cfg)
}

pub fn train_on_features(
    rows: &[Vec<f64>],
    labels: &[u8],
    schema_id: &str,
    cfg: &TrainConfig,
) -> Result<VerifierParams, VerifierError> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(VerifierError::EmptyData);
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(VerifierError::SchemaMismatch { expected: format!("{dim} features"), found: "ragged rows".into() });
    }

    // merge identical rows, keeping first-appearance order
    let mut index: HashMap<(Vec<u64>, u8), usize> = HashMap::new();
    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<u8> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for (row, &y) in rows.iter().zip(labels) {
        let key = (row.iter().map(|v| v.to_bits()).collect(), y);
        match index.get(&key) {
            Some(&i) => counts[i] += 1.0,
            None => {
                index.insert(key, xs.len());
                xs.push(row.clone());
                ys.push(y);
                counts.push(1.0);
            }
        }
    }
    let total: f64 = counts.iter().sum();
    let positives: f64 = ys.iter().zip(&counts).filter(|(y, _)| **y == 1).map(|(_, c)| c).sum();
    if positives == 0.0 || positives == total {
        return Err(VerifierError::SingleClass);
    }
    let alpha = cfg.focal_alpha.unwrap_or(positives / total);

    let mut mean = vec![0.0; dim];
    for (x, c) in xs.iter().zip(&counts) {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += c * v);
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut std = vec![0.0; dim];
    for (x, c) in xs.iter().zip(&counts) {
        std.iter_mut().zip(x.iter().zip(&mean)).for_each(|(s, (v, m))| *s += c * (v - m) * (v - m));
    }
    std.iter_mut().for_each(|s| {
        *s = (*s / total).sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    });
    let zs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let mut b = 0.0;
    for t in 0..cfg.epochs {
        let (loss, gw, gb) = loss_and_gradient(&w, b, &zs, &ys, Some(&counts), cfg.focal_gamma, alpha);
        if !loss.is_finite() || gw.iter().any(|g| !g.is_finite()) {
            return Err(VerifierError::NonFinite(t));
        }
        let lr = cfg.lr_at(t);
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= lr * (gi + cfg.weight_decay * *wi);
        }
        b -= lr * gb;
    }
    let (final_loss, _, _) = loss_and_gradient(&w, b, &zs, &ys, Some(&counts), cfg.focal_gamma, alpha);
    if !final_loss.is_finite() {
        return Err(VerifierError::NonFinite(cfg.epochs));
    }

    let weights: Vec<f64> = w.iter().zip(&std).map(|(wi, s)| wi / s).collect();
    let bias = b - weights.iter().zip(&mean).map(|(wi, m)| wi * m).sum::<f64>();
    Ok(VerifierParams {
        schema_id: schema_id.to_string(),
        weights,
        bias,
        training_meta: TrainingMeta { epochs: cfg.epochs, final_loss },
    })
}

// ---------------------------------------------------------------------------
// Scoring

pub fn score(
    params: &VerifierParams,
    task: &TaskSpec,
    prefix: &TracePrefix,
    featurizer: &dyn Featurizer,
) -> Result<f64, VerifierError> {
    Ok(sigmoid(params.logit(&featurizer.featurize(task, prefix))?))
}

/// Anything that can score a trace prefix.
pub trait PrefixScorer: Send + Sync {
    fn score_prefix(&self, task: &TaskSpec, prefix: &TracePrefix) -> Result<f64, VerifierError>;

    /// One score per prefix length `m = 1..=n` of the subtasks.
    fn score_solution(
        &self,
        task: &TaskSpec,
        scene: &crate::trace::SceneConfiguration,
        subtasks: &[Subtask],
    ) -> Result<Vec<f64>, VerifierError> {
        (1..=subtasks.len())
            .map(|m| {
                let p = TracePrefix { scene: scene.clone(), subtasks: subtasks[..m].to_vec() };
                self.score_prefix(task, &p)
            })
            .collect()
    }
}

pub struct LogisticScorer<F: Featurizer> {
    pub params: VerifierParams,
    pub featurizer: F,
}

impl<F: Featurizer> LogisticScorer<F> {
    pub fn new(params: VerifierParams, featurizer: F) -> Result<Self, VerifierError> {
        if params.schema_id != featurizer.schema_id() || params.weights.len() != featurizer.dim() {
            return Err(VerifierError::SchemaMismatch {
                expected: format!("{} ({} features)", featurizer.schema_id(), featurizer.dim()),
                found: format!("{} ({} features)", params.schema_id, params.weights.len()),
            });
        }
        Ok(LogisticScorer { params, featurizer })
    }
}

impl<F: Featurizer> PrefixScorer for LogisticScorer<F> {
    fn score_prefix(&self, task: &TaskSpec, prefix: &TracePrefix) -> Result<f64, VerifierError> {
        score(&self.params, task, prefix, &self.featurizer)
    }
}

/// Hosted scorer: `POST {url}` with `{"task", "prefix"}` answered by `{"score"}`.
pub struct RemoteScorer {
    pub url: String,
    pub timeout: Duration,
    pub transport: Arc<dyn Transport>,
}

impl PrefixScorer for RemoteScorer {
    fn score_prefix(&self, task: &TaskSpec, prefix: &TracePrefix) -> Result<f64, VerifierError> {
        let body = json!({ "task": task, "prefix": prefix.as_solution(&task.name).render() });
        let reply = self
            .transport
            .post_json(&self.url, &[], &body, self.timeout)
            .map_err(|e| VerifierError::ScorerUnavailable(e.to_string()))?;
        let s = reply["score"]
            .as_f64()
            .ok_or_else(|| VerifierError::ScorerUnavailable("response has no numeric score".into()))?;
        if !(0.0..=1.0).contains(&s) {
            return Err(VerifierError::InvalidScore(s));
        }
        Ok(s)
    }
}

// ---------------------------------------------------------------------------
// Aggregation and selection

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mean,
    GeoMean,
    Min,
    Max,
    Last,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Mean, Strategy::GeoMean, Strategy::Min, Strategy::Max, Strategy::Last];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mean => "mean",
            Strategy::GeoMean => "geomean",
            Strategy::Min => "min",
            Strategy::Max => "max",
            Strategy::Last => "last",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = VerifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| VerifierError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationStrategy {
    pub variant: Strategy,
    pub threshold: f64,
}

impl AggregationStrategy {
    pub fn new(variant: Strategy) -> Self {
        AggregationStrategy { variant, threshold: 0.5 }
    }
}

impl From<Strategy> for AggregationStrategy {
    fn from(variant: Strategy) -> Self {
        AggregationStrategy::new(variant)
    }
}

pub fn aggregate(scores: &[f64], strategy: Strategy) -> Result<f64, VerifierError> {
    if scores.is_empty() {
        return Err(VerifierError::EmptyScores);
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(VerifierError::InvalidScore(*bad));
    }
    let n = scores.len() as f64;
    let mean = || scores.iter().sum::<f64>() / n;
    let min = || scores.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(match strategy {
        Strategy::Mean => mean(),
        Strategy::Min => min(),
        Strategy::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Strategy::Last => scores[scores.len() - 1],
        Strategy::GeoMean => {
            if scores.len() == 1 {
                scores[0]
            } else if scores.contains(&0.0) {
                0.0
            } else {
                let g = (scores.iter().map(|s| s.ln()).sum::<f64>() / n).exp();
                // rounding may push the result just outside [min, mean]
                g.clamp(min(), mean())
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub score: f64,
    pub accepted: bool,
}

/// Picks the candidate with the highest aggregated score, lowest index on ties.
pub fn select_best<S: AsRef<[f64]>>(
    candidates: &[S],
    strategy: AggregationStrategy,
) -> Result<Selection, VerifierError> {
    let aggregated: Vec<f64> = candidates
        .iter()
        .map(|c| aggregate(c.as_ref(), strategy.variant))
        .collect::<Result<_, _>>()?;
    select_by_score(&aggregated, strategy.threshold)
}

pub fn select_by_score(aggregated: &[f64], threshold: f64) -> Result<Selection, VerifierError> {
    let (index, score) = aggregated
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, b)) if s <= b => best,
            _ => Some((i, s)),
        })
        .ok_or(VerifierError::EmptyCandidates)?;
    Ok(Selection { index, score, accepted: score >= threshold })
}

// ---------------------------------------------------------------------------
// Judge baseline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub value: f64,
    pub raw_reply: String,
}

impl JudgeVerdict {
    /// Replies other than 0, 0.5 and 1 are allowed but worth flagging.
    pub fn is_ternary(&self) -> bool {
        [0.0, 0.5, 1.0].contains(&self.value)
    }
}

/// Reads the first whitespace-separated token as a number in `[0, 1]`.
pub fn parse_verdict(reply: &str) -> Result<f64, VerifierError> {
    let token = reply
        .split_whitespace()
        .next()
        .map(|t| t.trim_matches(|c: char| !(c.is_ascii_digit() || c == '.')))
        .map(|t| t.trim_end_matches('.'))
        .unwrap_or("");
    match token.parse::<f64>() {
        Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
        _ => Err(VerifierError::UnparseableReply(reply.to_string())),
    }
}

pub fn judge_subtask(model: &dyn ModelClient, task: &TaskSpec, sub: &Subtask) -> Result<JudgeVerdict, VerifierError> {
    let step_text = format!("{}\n{}", sub.name, sub.supervision.render());
    let bundle = PromptBundle {
        system: String::new(),
        user: render_judge_prompt(&task.description, &step_text),
        exemplars_used: Vec::new(),
        catalog_snapshot: Vec::new(),
    };
    let raw_reply = model.generate(&bundle)?;
    let value = parse_verdict(&raw_reply)?;
    if value != 0.0 && value != 0.5 && value != 1.0 {
        log::info!("judge returned non-ternary verdict {value}");
    }
    Ok(JudgeVerdict { value, raw_reply })
}
