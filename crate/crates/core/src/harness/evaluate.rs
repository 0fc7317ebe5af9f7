//! Best-of-n selection over executed candidates, one row per strategy plus
//! the unverified baseline.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsReport};
use super::HarnessError;
use crate::scripted_env::{ExecMode, ExecutionOutcome, Executor};
use crate::trace::{SceneConfiguration, Solution, Subtask, TaskSpec, TracePrefix};
use crate::verifier::{aggregate, select_by_score, AggregationStrategy, PrefixScorer, VerifierError};

/// Row label of the baseline that picks a candidate uniformly at random.
pub const BASELINE: &str = "BaseModel";

pub const SWEEP_THRESHOLDS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub task: TaskSpec,
    pub candidates: Vec<Solution>,
    pub outcomes: Vec<ExecutionOutcome>,
}

impl CandidateSet {
    pub fn execute(task: TaskSpec, candidates: Vec<Solution>, executor: &Executor) -> Result<Self, HarnessError> {
        let outcomes = candidates
            .iter()
            .map(|c| executor.execute_solution(c, ExecMode::RunAll))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CandidateSet { task, candidates, outcomes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub accepted: usize,
    pub accepted_successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub metrics: MetricsReport,
    /// Selections at or above the strategy threshold; absent for the baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepPoint>,
}

/// Scores every candidate once, then selects per strategy. Sets without
/// candidates are skipped.
pub fn evaluate_selection(
    sets: &[CandidateSet],
    scorer: &dyn PrefixScorer,
    strategies: &[AggregationStrategy],
    baseline_seed: u64,
) -> Result<Vec<EvalRow>, HarnessError> {
    let sets: Vec<&CandidateSet> = sets.iter().filter(|s| !s.candidates.is_empty()).collect();
    if sets.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    let scores: Vec<Vec<Vec<f64>>> = sets
        .par_iter()
        .map(|s| {
            s.candidates
                .iter()
                .map(|c| scorer.score_solution(&s.task, &c.scene, &c.subtasks))
                .collect::<Result<Vec<_>, VerifierError>>()
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(strategies.len() + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(baseline_seed);
    let picked: Vec<ExecutionOutcome> =
        sets.iter().map(|s| s.outcomes[rng.gen_range(0..s.candidates.len())].clone()).collect();
    rows.push(EvalRow { method: BASELINE.to_string(), metrics: compute_metrics(&picked)?, accepted: None, sweep: Vec::new() });

    for strategy in strategies {
        let mut picked = Vec::with_capacity(sets.len());
        let mut finals = Vec::with_capacity(sets.len());
        for (set, per_candidate) in sets.iter().zip(&scores) {
            let aggregated = per_candidate
                .iter()
                .map(|s| aggregate(s, strategy.variant))
                .collect::<Result<Vec<_>, _>>()?;
            let sel = select_by_score(&aggregated, strategy.threshold)?;
            picked.push(set.outcomes[sel.index].clone());
            finals.push(sel.score);
        }
        let sweep = SWEEP_THRESHOLDS
            .iter()
            .map(|&t| {
                let chosen = finals.iter().zip(&picked).filter(|(s, _)| **s >= t);
                let (accepted, accepted_successes) =
                    chosen.fold((0, 0), |(a, s), (_, o)| (a + 1, s + usize::from(o.overall_success)));
                SweepPoint { threshold: t, accepted, accepted_successes }
            })
            .collect();
        rows.push(EvalRow {
            method: strategy.variant.name().to_string(),
            metrics: compute_metrics(&picked)?,
            accepted: Some(finals.iter().filter(|s| **s >= strategy.threshold).count()),
            sweep,
        });
    }
    Ok(rows)
}

/// Scores with true labels: a known candidate gets its own per-prefix
/// labels (1 iff subtask `m` and the whole solution succeeded); a lone
/// prefix gets the best label any candidate gave it. Unknown text scores 0.
pub struct OracleScorer {
    prefixes: HashMap<(String, String), f64>,
    solutions: HashMap<(String, String), Vec<f64>>,
}

impl OracleScorer {
    pub fn new(sets: &[CandidateSet]) -> Self {
        let mut prefixes = HashMap::new();
        let mut solutions = HashMap::new();
        for set in sets {
            for (cand, outcome) in set.candidates.iter().zip(&set.outcomes) {
                let labels: Vec<f64> = (1..=cand.len())
                    .map(|m| {
                        let ok = outcome.subtask_success.get(m - 1).copied().unwrap_or(false) && outcome.overall_success;
                        f64::from(u8::from(ok))
                    })
                    .collect();
                for (m, label) in labels.iter().enumerate() {
                    let key = (set.task.name.clone(), prefix_text(&set.task.name, cand, m + 1));
                    let slot = prefixes.entry(key).or_insert(0.0);
                    *slot = f64::max(*slot, *label);
                }
                solutions.entry((set.task.name.clone(), cand.render())).or_insert(labels);
            }
        }
        OracleScorer { prefixes, solutions }
    }
}

fn prefix_text(task: &str, sol: &Solution, m: usize) -> String {
    TracePrefix { scene: sol.scene.clone(), subtasks: sol.subtasks[..m].to_vec() }.as_solution(task).render()
}

impl PrefixScorer for OracleScorer {
    fn score_prefix(&self, task: &TaskSpec, prefix: &TracePrefix) -> Result<f64, VerifierError> {
        let key = (task.name.clone(), prefix.as_solution(&task.name).render());
        Ok(self.prefixes.get(&key).copied().unwrap_or(0.0))
    }

    fn score_solution(&self, task: &TaskSpec, scene: &SceneConfiguration, subtasks: &[Subtask]) -> Result<Vec<f64>, VerifierError> {
        let text = TracePrefix { scene: scene.clone(), subtasks: subtasks.to_vec() }.as_solution(&task.name).render();
        match self.solutions.get(&(task.name.clone(), text)) {
            Some(labels) => Ok(labels.clone()),
            None => (1..=subtasks.len())
                .map(|m| self.score_prefix(task, &TracePrefix { scene: scene.clone(), subtasks: subtasks[..m].to_vec() }))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scripted_env::ScriptedWorld;
    use crate::synth::synthetic_suite;
    use crate::trace::ApiCatalog;
    use crate::verifier::Strategy;

    fn sets(seed: u64, n: usize) -> Vec<CandidateSet> {
        synthetic_suite(seed, n, 3)
            .into_iter()
            .map(|t| {
                let exec = Executor::new(ScriptedWorld::for_task(&t.task), ApiCatalog::default());
                CandidateSet::execute(t.task, t.candidates, &exec).unwrap()
            })
            .collect()
    }

    #[test]
    fn oracle_selection_finds_every_success() {
        let sets = sets(11, 20);
        let strategies: Vec<AggregationStrategy> = Strategy::ALL.iter().map(|s| (*s).into()).collect();
        let rows = evaluate_selection(&sets, &OracleScorer::new(&sets), &strategies, 0).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].method, BASELINE);
        for row in &rows[1..] {
            assert_eq!(row.metrics.atsr, 1.0, "{}", row.method);
        }
    }

    #[test]
    fn all_successful_candidates() {
        let mut sets = sets(2, 5);
        for s in &mut sets {
            let good = s.outcomes.iter().position(|o| o.overall_success).unwrap();
            s.candidates = vec![s.candidates[good].clone(); 3];
            s.outcomes = vec![s.outcomes[good].clone(); 3];
        }
        let zero = crate::verifier::LogisticScorer::new(
            crate::verifier::VerifierParams::zeros(crate::verifier::SCHEMA_V1, crate::verifier::FEATURE_DIM_V1),
            crate::verifier::SchemaV1::default(),
        )
        .unwrap();
        let strategies: Vec<AggregationStrategy> = Strategy::ALL.iter().map(|s| (*s).into()).collect();
        for row in evaluate_selection(&sets, &zero, &strategies, 3).unwrap() {
            assert_eq!(row.metrics.atsr, 1.0);
        }
    }
}
