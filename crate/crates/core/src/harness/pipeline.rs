//! The offline pipeline behind the command-line tool. Each stage reads the
//! previous stage's files from the output directory and writes its own:
//!
//! | stage    | writes                                                     |
//! |----------|------------------------------------------------------------|
//! | generate | `generated.jsonl`                                          |
//! | rollout  | `trees/NNN.json`, `outcomes.jsonl`, grows the pool         |
//! | dataset  | `dataset.jsonl`, `split_{task,solution}_{train,test}.jsonl` |
//! | train    | `params_{task,solution}.json`                              |
//! | evaluate | `report.txt`, `report.json`                                |
//! | judge    | `judge.jsonl`                                              |

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::{ExemplarSource, PipelineConfig};
use super::evaluate::{evaluate_selection, CandidateSet, OracleScorer};
use super::metrics::{compute_metrics, read_outcomes, MetricsReport, OutcomeRecord};
use super::report::{Report, SplitSection};
use super::split::{split_dataset, SplitMode, SplitSpec};
use super::HarnessError;
use crate::model_io::{build_prompt, PromptBundle, DEFAULT_INSTRUCTIONS};
use crate::rollout::{emit_dataset, expand_tree, generate_base_solutions, label_rewards, LabeledPrefix, Origin, RolloutError, SolutionTree};
use crate::scripted_env::{ExecMode, Executor};
use crate::synth::synthetic_suite;
use crate::task_pool::{embed_task, Embedder, ExemplarPool, PoolError};
use crate::trace::{Solution, TaskSpec};
use crate::verifier::{
    judge_subtask, train, train_on_features, AggregationStrategy, Featurizer, LogisticScorer, SchemaV1, Strategy, VerifierParams,
};

pub const GENERATED_FILE: &str = "generated.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const TREES_DIR: &str = "trees";
pub const REPORT_STEM: &str = "report";

pub fn split_file(mode: SplitMode, part: &str) -> String {
    format!("split_{}_{part}.jsonl", mode.short())
}

pub fn params_file(mode: SplitMode) -> String {
    format!("params_{}.json", mode.short())
}

// ---------------------------------------------------------------------------
// JSONL helpers

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| missing(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::File {
                path: path.display().to_string(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn missing(path: &Path, e: std::io::Error) -> HarnessError {
    let hint = match path.file_name().and_then(|n| n.to_str()) {
        Some(GENERATED_FILE) => " (run `generate` first)",
        Some(DATASET_FILE) => " (run `dataset` first)",
        Some(n) if n.starts_with("split_") => " (run `dataset` first)",
        Some(n) if n.starts_with("params_") => " (run `train` first)",
        _ => "",
    };
    HarnessError::File { path: path.display().to_string(), message: format!("{e}{hint}") }
}

// ---------------------------------------------------------------------------
// Pool

fn open_pool(cfg: &PipelineConfig, embedder: &dyn Embedder) -> Result<ExemplarPool, HarnessError> {
    let path = cfg.pool_path();
    if path.exists() {
        Ok(ExemplarPool::load(&path, embedder.dimension(), embedder.id())?)
    } else {
        Ok(ExemplarPool::for_embedder(embedder))
    }
}

/// One line of a pool seed file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolSeed {
    pub task: TaskSpec,
    pub solution: Solution,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PoolAddSummary {
    pub added: usize,
    pub skipped: Vec<String>,
    pub pool_size: usize,
}

/// Adds seed solutions to the pool. Solutions without a recorded outcome
/// are executed first; unsuccessful ones are skipped.
pub fn pool_add(cfg: &PipelineConfig, from: &Path) -> Result<PoolAddSummary, HarnessError> {
    let embedder = cfg.embedder()?;
    let catalog = cfg.load_catalog()?;
    let mut pool = open_pool(cfg, embedder.as_ref())?;
    let mut summary = PoolAddSummary::default();
    for seed in read_jsonl::<PoolSeed>(from)? {
        let PoolSeed { task, mut solution } = seed;
        if solution.overall_success.is_none() {
            let exec = Executor::new(cfg.world_for(&task)?, catalog.clone());
            solution.overall_success = Some(exec.execute_solution(&solution, ExecMode::RunAll)?.overall_success);
        }
        let name = task.name.clone();
        match insert(&mut pool, task, solution, embedder.as_ref(), cfg) {
            Ok(()) => summary.added += 1,
            Err(HarnessError::Pool(e @ (PoolError::NotSuccessful(_) | PoolError::DuplicateTask(_)))) => {
                log::warn!("skipping {name}: {e}");
                summary.skipped.push(name);
            }
            Err(e) => return Err(e),
        }
    }
    pool.save(&cfg.pool_path())?;
    summary.pool_size = pool.len();
    Ok(summary)
}

fn insert(
    pool: &mut ExemplarPool,
    task: TaskSpec,
    solution: Solution,
    embedder: &dyn Embedder,
    cfg: &PipelineConfig,
) -> Result<(), HarnessError> {
    let embedding = embed_task(&task.name, &task.description, embedder)?;
    pool.duplicate_policy = cfg.pool.duplicate_policy;
    pool.insert_with_embedding(task, solution, embedding)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolListing {
    pub inserted_at: u64,
    pub name: String,
    pub description: String,
    pub subtasks: usize,
}

pub fn pool_list(cfg: &PipelineConfig) -> Result<Vec<PoolListing>, HarnessError> {
    let embedder = cfg.embedder()?;
    let pool = open_pool(cfg, embedder.as_ref())?;
    Ok(pool
        .entries()
        .iter()
        .map(|e| PoolListing {
            inserted_at: e.inserted_at,
            name: e.task.name.clone(),
            description: e.task.description.clone(),
            subtasks: e.solution.len(),
        })
        .collect())
}

/// Names and similarities of the `k` pool tasks closest to the query.
pub fn pool_retrieve(cfg: &PipelineConfig, name: &str, description: &str, k: usize) -> Result<Vec<(String, f64)>, HarnessError> {
    let embedder = cfg.embedder()?;
    let pool = open_pool(cfg, embedder.as_ref())?;
    let query = embed_task(name, description, embedder.as_ref())?;
    Ok(pool.retrieve_top_k(&query, k)?.into_iter().map(|(e, s)| (e.task.name.clone(), s)).collect())
}

// ---------------------------------------------------------------------------
// Generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub task: TaskSpec,
    pub prompt: PromptBundle,
    pub bases: Vec<Solution>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenerateSummary {
    pub tasks: usize,
    pub bases: usize,
    pub degenerate: usize,
    /// Tasks dropped because every generation was unparseable.
    pub dropped: Vec<String>,
}

fn prompt_for(
    cfg: &PipelineConfig,
    task: &TaskSpec,
    pool: &ExemplarPool,
    embedder: &dyn Embedder,
    catalog: &crate::trace::ApiCatalog,
) -> Result<PromptBundle, HarnessError> {
    let exemplars = match cfg.pool.exemplars {
        ExemplarSource::Pool if !pool.is_empty() => {
            let query = embed_task(&task.name, &task.description, embedder)?;
            pool.retrieve_top_k(&query, cfg.pool.top_k)?.into_iter().map(|(e, _)| e.clone()).collect()
        }
        _ => Vec::new(),
    };
    Ok(build_prompt(task, &exemplars, catalog, DEFAULT_INSTRUCTIONS, cfg.exemplar_mode()))
}

/// Samples `rollout.n_base` base solutions per configured task.
pub fn generate(cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<GenerateSummary, HarnessError> {
    let tasks = cfg.load_tasks()?;
    let catalog = cfg.load_catalog()?;
    let embedder = cfg.embedder()?;
    let pool = open_pool(cfg, embedder.as_ref())?;
    let policy = cfg.policy_model(seed)?;
    let mut records = Vec::with_capacity(tasks.len());
    let mut summary = GenerateSummary::default();
    for task in tasks {
        let prompt = prompt_for(cfg, &task, &pool, embedder.as_ref(), &catalog)?;
        match generate_base_solutions(policy.as_ref(), &task, &prompt, cfg.rollout.n_base, cfg.rollout.retries) {
            Ok(bases) => {
                summary.tasks += 1;
                summary.bases += bases.len();
                summary.degenerate += bases.iter().filter(|b| b.degenerate).count();
                records.push(GeneratedRecord { task, prompt, bases });
            }
            Err(RolloutError::ExhaustedRetries { attempts }) => {
                log::warn!("dropping {}: no parseable generation in {attempts} attempts", task.name);
                summary.dropped.push(task.name);
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_jsonl(&out.join(GENERATED_FILE), &records)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Rollout

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RolloutSummary {
    pub tasks: usize,
    pub nodes: usize,
    pub dedups: usize,
    pub successful_nodes: usize,
    pub pool_inserts: usize,
    /// Over base solutions only.
    pub base_metrics: Option<MetricsReport>,
}

/// Expands, executes and labels one tree per generated task. Base outcomes
/// go to `outcomes.jsonl`; each task's first successful base joins the pool.
pub fn rollout(cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<RolloutSummary, HarnessError> {
    let generated: Vec<GeneratedRecord> = read_jsonl(&out.join(GENERATED_FILE))?;
    let catalog = cfg.load_catalog()?;
    let completer = cfg.completer_model(seed)?;
    let embedder = cfg.embedder()?;
    let mut pool = open_pool(cfg, embedder.as_ref())?;
    let trees_dir = out.join(TREES_DIR);
    if trees_dir.exists() {
        std::fs::remove_dir_all(&trees_dir)?;
    }
    std::fs::create_dir_all(&trees_dir)?;

    let mut summary = RolloutSummary::default();
    let mut outcomes = Vec::new();
    for (idx, rec) in generated.into_iter().enumerate() {
        let executor = Executor::new(cfg.world_for(&rec.task)?, catalog.clone());
        let (tree, _) = expand_tree(completer.as_ref(), &executor, &rec.task, &rec.prompt, rec.bases, &cfg.rollout)?;
        summary.tasks += 1;
        summary.nodes += tree.nodes().len();
        summary.dedups += tree.dedups().len();
        let mut inserted = false;
        for node in tree.nodes() {
            let Some(o) = &node.outcome else { continue };
            let ok = o.overall_success && node.failed.is_none();
            summary.successful_nodes += usize::from(ok);
            if node.origin.is_base() {
                outcomes.push(OutcomeRecord { task: rec.task.name.clone(), outcome: o.clone() });
                if ok && !inserted {
                    let mut sol = node.solution.clone();
                    sol.overall_success = Some(true);
                    match insert(&mut pool, rec.task.clone(), sol, embedder.as_ref(), cfg) {
                        Ok(()) => summary.pool_inserts += 1,
                        Err(HarnessError::Pool(PoolError::DuplicateTask(_))) => {}
                        Err(e) => return Err(e),
                    }
                    inserted = true;
                }
            }
        }
        std::fs::write(trees_dir.join(format!("{idx:03}.json")), serde_json::to_string_pretty(&tree)?)?;
    }
    write_jsonl(&out.join(OUTCOMES_FILE), &outcomes)?;
    if summary.pool_inserts > 0 {
        pool.save(&cfg.pool_path())?;
    }
    let base: Vec<_> = outcomes.into_iter().map(|r| r.outcome).collect();
    summary.base_metrics = compute_metrics(&base).ok();
    Ok(summary)
}

pub fn load_trees(out: &Path) -> Result<Vec<SolutionTree>, HarnessError> {
    let dir = out.join(TREES_DIR);
    let entries = std::fs::read_dir(&dir).map_err(|e| HarnessError::File {
        path: dir.display().to_string(),
        message: format!("{e} (run `rollout` first)"),
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| HarnessError::File { path: p.display().to_string(), message: e.to_string() })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dataset

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub positives: usize,
    /// `(split, train records, test records)`.
    pub splits: Vec<(String, usize, usize)>,
}

pub fn dataset(cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<DatasetSummary, HarnessError> {
    let mut records = Vec::new();
    for tree in load_trees(out)? {
        let rewards = label_rewards(&tree)?;
        records.extend(emit_dataset(&tree, &rewards)?);
    }
    write_jsonl(&out.join(DATASET_FILE), &records)?;
    let mut summary = DatasetSummary {
        records: records.len(),
        positives: records.iter().filter(|r| r.label == 1).count(),
        splits: Vec::new(),
    };
    for mode in SplitMode::ALL {
        let spec = SplitSpec { mode, test_fraction: cfg.evaluate.test_fraction, seed };
        let (train, test) = split_dataset(&records, &spec)?;
        write_jsonl(&out.join(split_file(mode, "train")), &train)?;
        write_jsonl(&out.join(split_file(mode, "test")), &test)?;
        summary.splits.push((mode.short().to_string(), train.len(), test.len()));
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Train

fn task_map(trees: &[SolutionTree]) -> HashMap<String, TaskSpec> {
    trees.iter().map(|t| (t.task.name.clone(), t.task.clone())).collect()
}

/// Trains one verifier per split on its train partition.
pub fn train_verifiers(cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<Vec<(SplitMode, VerifierParams)>, HarnessError> {
    let tasks = task_map(&load_trees(out)?);
    let featurizer = SchemaV1::new(cfg.load_catalog()?);
    let train_cfg = crate::verifier::TrainConfig { seed, ..cfg.train.clone() };
    let mut out_params = Vec::new();
    for mode in SplitMode::ALL {
        let records: Vec<LabeledPrefix> = read_jsonl(&out.join(split_file(mode, "train")))?;
        let params = train(&records, &tasks, &featurizer, &train_cfg)?;
        params.save(&out.join(params_file(mode)))?;
        out_params.push((mode, params));
    }
    Ok(out_params)
}

// ---------------------------------------------------------------------------
// Evaluate

/// Candidate sets for one split's test partition: every executed, non-failed
/// tree node whose task (by task) or emitting solution (by solution) landed
/// in test.
pub fn test_candidates(trees: &[SolutionTree], test: &[LabeledPrefix], mode: SplitMode) -> Vec<CandidateSet> {
    let tasks: BTreeSet<&str> = test.iter().map(|r| r.task_name.as_str()).collect();
    let origins: BTreeSet<(&str, Origin)> = test.iter().map(|r| (r.task_name.as_str(), r.solution_origin())).collect();
    trees
        .iter()
        .filter(|t| tasks.contains(t.task.name.as_str()))
        .filter_map(|t| {
            let (candidates, outcomes) = t
                .nodes()
                .iter()
                .filter(|n| n.failed.is_none())
                .filter(|n| mode == SplitMode::ByTask || origins.contains(&(t.task.name.as_str(), n.origin)))
                .filter_map(|n| n.outcome.clone().map(|o| (n.solution.clone(), o)))
                .unzip::<_, _, Vec<_>, Vec<_>>();
            (!candidates.is_empty()).then(|| CandidateSet { task: t.task.clone(), candidates, outcomes })
        })
        .collect()
}

fn aggregation(cfg: &PipelineConfig, strategies: &[Strategy]) -> Vec<AggregationStrategy> {
    strategies.iter().map(|s| AggregationStrategy { variant: *s, threshold: cfg.evaluate.threshold }).collect()
}

fn baseline_note() -> String {
    "BaseModel: a seeded uniform pick among each task's candidates, standing in for unverified generation.".to_string()
}

/// Selection report over the test partitions of the requested splits.
pub fn evaluate(
    cfg: &PipelineConfig,
    out: &Path,
    seed: u64,
    strategies: &[Strategy],
    splits: &[SplitMode],
) -> Result<Report, HarnessError> {
    let trees = load_trees(out)?;
    let catalog = cfg.load_catalog()?;
    let mut report = Report::new("Verifier-guided selection");
    for &mode in splits {
        let params = VerifierParams::load(&out.join(params_file(mode))).map_err(|e| HarnessError::File {
            path: out.join(params_file(mode)).display().to_string(),
            message: format!("{e} (run `train` first)"),
        })?;
        let scorer = LogisticScorer::new(params, SchemaV1::new(catalog.clone()))?;
        let test: Vec<LabeledPrefix> = read_jsonl(&out.join(split_file(mode, "test")))?;
        let sets = test_candidates(&trees, &test, mode);
        if sets.is_empty() {
            report.notes.push(format!("{}: no test candidates", mode.short()));
            continue;
        }
        let rows = evaluate_selection(&sets, &scorer, &aggregation(cfg, strategies), seed)?;
        report.sections.push(SplitSection {
            split: mode.short().to_string(),
            test_tasks: sets.len(),
            test_candidates: sets.iter().map(|s| s.candidates.len()).sum(),
            rows,
        });
    }
    report.notes.push(baseline_note());
    report.write(out, REPORT_STEM)?;
    Ok(report)
}

pub const SUITE_TEST_TASKS: usize = 50;
pub const SUITE_TRAIN_TASKS: usize = 100;
pub const SUITE_CANDIDATES: usize = 3;

/// Executed candidate sets of a synthetic suite, one clean candidate each.
pub fn synthetic_sets(seed: u64, n_tasks: usize) -> Result<Vec<CandidateSet>, HarnessError> {
    let catalog = crate::trace::ApiCatalog::default();
    synthetic_suite(seed, n_tasks, SUITE_CANDIDATES)
        .into_iter()
        .map(|t| {
            let exec = Executor::new(crate::scripted_env::ScriptedWorld::for_task(&t.task), catalog.clone());
            CandidateSet::execute(t.task, t.candidates, &exec)
        })
        .collect()
}

/// Trains on one synthetic suite and evaluates selection on another,
/// disjoint one of 50 tasks with three candidates each.
pub fn synthetic_benchmark(cfg: &PipelineConfig, seed: u64, strategies: &[Strategy]) -> Result<Report, HarnessError> {
    let featurizer = SchemaV1::default();
    let train_sets = synthetic_sets(seed.wrapping_add(0x9e37_79b9), SUITE_TRAIN_TASKS)?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for set in &train_sets {
        for (cand, outcome) in set.candidates.iter().zip(&set.outcomes) {
            for m in 1..=cand.len() {
                let prefix = crate::trace::prefix(cand, m)?;
                rows.push(featurizer.featurize(&set.task, &prefix).values);
                labels.push(u8::from(outcome.subtask_success[m - 1] && outcome.overall_success));
            }
        }
    }
    let train_cfg = crate::verifier::TrainConfig { seed, ..cfg.train.clone() };
    let params = train_on_features(&rows, &labels, featurizer.schema_id(), &train_cfg)?;
    let scorer = LogisticScorer::new(params, featurizer)?;

    let test_sets = synthetic_sets(seed, SUITE_TEST_TASKS)?;
    let result = evaluate_selection(&test_sets, &scorer, &aggregation(cfg, strategies), seed)?;
    let oracle = evaluate_selection(&test_sets, &OracleScorer::new(&test_sets), &aggregation(cfg, &[Strategy::Last]), seed)?;
    let mut report = Report::new("Verifier-guided selection, synthetic suite");
    report.notes.push(format!(
        "trained on {} prefixes from {} disjoint tasks; oracle Last ATSR {:.4}",
        rows.len(),
        SUITE_TRAIN_TASKS,
        oracle[1].metrics.atsr
    ));
    report.notes.push(baseline_note());
    report.sections.push(SplitSection {
        split: "synthetic".into(),
        test_tasks: test_sets.len(),
        test_candidates: test_sets.iter().map(|s| s.candidates.len()).sum(),
        rows: result,
    });
    Ok(report)
}

// ---------------------------------------------------------------------------
// Judge

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub task: String,
    pub origin: Origin,
    pub m: usize,
    pub verdict: f64,
    pub label: u8,
    pub raw_reply: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct JudgeSummary {
    pub judged: usize,
    pub unparseable: usize,
    pub non_ternary: usize,
    /// Verdicts of at least 0.5 that agree with the execution label.
    pub agreement: f64,
}

/// Asks the judge model about every subtask of every executed tree node.
pub fn judge(cfg: &PipelineConfig, out: &Path, seed: u64) -> Result<JudgeSummary, HarnessError> {
    let model = cfg.judge_model(seed)?;
    let mut records = Vec::new();
    let mut summary = JudgeSummary::default();
    for tree in load_trees(out)? {
        let rewards = label_rewards(&tree)?;
        for node in tree.nodes().iter().filter(|n| n.failed.is_none() && n.outcome.is_some()) {
            for (idx, sub) in node.solution.subtasks.iter().enumerate() {
                let m = idx + 1;
                match judge_subtask(model.as_ref(), &tree.task, sub) {
                    Ok(v) => {
                        summary.non_ternary += usize::from(!v.is_ternary());
                        records.push(JudgeRecord {
                            task: tree.task.name.clone(),
                            origin: node.origin,
                            m,
                            verdict: v.value,
                            label: rewards.get(node.index, m).unwrap_or(0),
                            raw_reply: v.raw_reply,
                        });
                    }
                    Err(crate::verifier::VerifierError::UnparseableReply(r)) => {
                        log::warn!("unparseable judge reply: {r:?}");
                        summary.unparseable += 1;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    summary.judged = records.len();
    let agree = records.iter().filter(|r| (r.verdict >= 0.5) == (r.label == 1)).count();
    summary.agreement = if records.is_empty() { 0.0 } else { agree as f64 / records.len() as f64 };
    write_jsonl(&out.join("judge.jsonl"), &records)?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Metrics

/// Metrics over an outcomes file (`{task, subtask_success, overall_success}` lines).
pub fn metrics_from_file(path: &Path) -> Result<MetricsReport, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| missing(path, e))?;
    let outcomes: Vec<_> = read_outcomes(&text)?.into_iter().map(|r| r.outcome).collect();
    compute_metrics(&outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_benchmark_lifts_selection() {
        let cfg = PipelineConfig::default();
        let report = synthetic_benchmark(&cfg, 0, &[Strategy::Last]).unwrap();
        let rows = &report.sections[0].rows;
        assert!(rows[1].metrics.atsr >= 0.9, "{}", report.render_text());
        assert!((0.25..=0.42).contains(&rows[0].metrics.atsr), "{}", report.render_text());
    }
}
