use std::collections::BTreeSet;
use std::path::Path;

use gsa_core::golden::{row_outcomes, APPENDIX_CORPUS};
use gsa_core::harness::config::PipelineConfig;
use gsa_core::harness::pipeline;
use gsa_core::harness::{compute_metrics, evaluate_selection, split_dataset, CandidateSet, OracleScorer, SplitMode, SplitSpec};
use gsa_core::rollout::{emit_dataset, label_rewards, random_executed_tree, LabeledPrefix};
use gsa_core::scripted_env::ExecutionOutcome;
use gsa_core::verifier::{AggregationStrategy, Strategy as Agg};
use proptest::prelude::*;

fn records(seed: u64, trees: usize) -> Vec<LabeledPrefix> {
    (0..trees as u64)
        .flat_map(|t| {
            let tree = random_executed_tree(seed.wrapping_mul(31).wrapping_add(t));
            let rewards = label_rewards(&tree).unwrap();
            emit_dataset(&tree, &rewards).unwrap()
        })
        .collect()
}

fn outcome() -> impl Strategy<Value = ExecutionOutcome> {
    (proptest::collection::vec(any::<bool>(), 1..5), any::<bool>()).prop_map(|(bits, ok)| ExecutionOutcome {
        overall_success: ok && bits.iter().all(|b| *b),
        steps_executed: bits.len(),
        subtask_success: bits,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn by_task_split_never_shares_a_task(seed in any::<u64>(), n in 2usize..12, f in 0.05f64..0.95) {
        let data = records(seed, n);
        prop_assume!(data.iter().map(|r| &r.task_name).collect::<BTreeSet<_>>().len() >= 2);
        let (train, test) = split_dataset(&data, &SplitSpec { mode: SplitMode::ByTask, test_fraction: f, seed }).unwrap();
        let a: BTreeSet<_> = train.iter().map(|r| &r.task_name).collect();
        let b: BTreeSet<_> = test.iter().map(|r| &r.task_name).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert!(!a.is_empty() && !b.is_empty());
        prop_assert_eq!(train.len() + test.len(), data.len());
    }

    #[test]
    fn by_solution_split_loses_nothing(seed in any::<u64>(), n in 1usize..8, f in 0.05f64..0.95) {
        let data = records(seed, n);
        let spec = SplitSpec { mode: SplitMode::BySolution, test_fraction: f, seed };
        let (train, test) = split_dataset(&data, &spec).unwrap();
        let mut all: Vec<_> = train.iter().chain(&test).map(|r| serde_json::to_string(r).unwrap()).collect();
        let mut orig: Vec<_> = data.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        all.sort();
        orig.sort();
        prop_assert_eq!(all, orig);
        let key = |r: &LabeledPrefix| (r.task_name.clone(), r.solution_origin());
        let a: BTreeSet<_> = train.iter().map(key).collect();
        let b: BTreeSet<_> = test.iter().map(key).collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(split_dataset(&data, &spec).unwrap(), (train, test));
    }

    #[test]
    fn metrics_ignore_record_order(mut v in proptest::collection::vec(outcome(), 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let before = compute_metrics(&v).unwrap();
        v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(before, compute_metrics(&v).unwrap());
    }

    /// With perfect scores, selection succeeds exactly on the tasks that have
    /// a successful candidate, and never does worse than the random pick.
    #[test]
    fn oracle_selection_is_optimal(seed in any::<u64>(), n in 1usize..15) {
        let sets: Vec<CandidateSet> = (0..n as u64)
            .filter_map(|t| {
                let tree = random_executed_tree(seed.wrapping_add(t));
                // random outcomes can differ between identical bases; keep the first
                let mut seen = BTreeSet::new();
                let (candidates, outcomes) = tree.nodes().iter()
                    .filter(|n| n.failed.is_none() && seen.insert(n.solution.render()))
                    .map(|n| (n.solution.clone(), n.outcome.clone().unwrap()))
                    .unzip::<_, _, Vec<_>, Vec<_>>();
                (!candidates.is_empty()).then(|| CandidateSet { task: tree.task.clone(), candidates, outcomes })
            })
            .collect();
        prop_assume!(!sets.is_empty());
        let rows = evaluate_selection(&sets, &OracleScorer::new(&sets), &[AggregationStrategy::new(Agg::Last)], seed).unwrap();
        let solvable = sets.iter().filter(|s| s.outcomes.iter().any(|o| o.overall_success)).count();
        let expected = gsa_core::harness::metrics::round4(solvable, sets.len());
        prop_assert_eq!(rows[1].metrics.atsr, expected);
        prop_assert!(rows[1].metrics.atsr >= rows[0].metrics.atsr);
    }
}

#[test]
fn appendix_corpus_rates() {
    let outcomes: Vec<_> = APPENDIX_CORPUS.iter().flat_map(row_outcomes).collect();
    let m = compute_metrics(&outcomes).unwrap();
    assert_eq!((m.counts.successes, m.counts.solutions), (83, 150));
    assert_eq!((m.counts.subtask_successes, m.counts.subtasks), (144, 287));
    assert_eq!((m.atsr, m.assr), (0.5533, 0.5017));
}

#[test]
fn corpus_fixture_file_matches_the_table() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/corpus30_outcomes.jsonl");
    let m = pipeline::metrics_from_file(&path).unwrap();
    assert_eq!((m.atsr, m.assr), (0.5533, 0.5017));
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

#[test]
fn offline_pipeline_runs_and_is_deterministic() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/e2e");
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        copy_dir(&fixture, &dir.path().join("cfg"));
        let cfg = PipelineConfig::load(&dir.path().join("cfg/config.toml")).unwrap();
        let out = dir.path().join("out");
        let seed = cfg.seed;
        let added = pipeline::pool_add(&cfg, &dir.path().join("cfg/pool_seed.jsonl")).unwrap();
        assert_eq!(added.pool_size, 15);
        pipeline::generate(&cfg, &out, seed).unwrap();
        let rolled = pipeline::rollout(&cfg, &out, seed).unwrap();
        assert!(rolled.pool_inserts > 0);
        assert!(pipeline::pool_list(&cfg).unwrap().len() > 15);
        pipeline::dataset(&cfg, &out, seed).unwrap();
        pipeline::train_verifiers(&cfg, &out, seed).unwrap();
        let report = pipeline::evaluate(&cfg, &out, seed, &Agg::ALL, &SplitMode::ALL).unwrap();
        assert_eq!(report.sections.len(), 2);
        for s in &report.sections {
            let methods: Vec<_> = s.rows.iter().map(|r| r.method.as_str()).collect();
            assert_eq!(methods, ["BaseModel", "mean", "geomean", "min", "max", "last"]);
        }
        assert!(out.join("report.txt").exists() && out.join("report.json").exists());
        reports.push(std::fs::read_to_string(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn stages_out_of_order_explain_themselves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let err = pipeline::rollout(&cfg, dir.path(), 0).unwrap_err().to_string();
    assert!(err.contains("run `generate` first"), "{err}");
    let err = pipeline::dataset(&cfg, dir.path(), 0).unwrap_err().to_string();
    assert!(err.contains("run `rollout` first"), "{err}");
}
