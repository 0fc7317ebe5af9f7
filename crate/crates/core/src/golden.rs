//! Reference fixtures: the Fold Chair case study, the retrieval table, the
//! per-task corpus statistics and the initial exemplar pool.

use std::collections::BTreeMap;

use crate::model_io::{build_completion_prompt, build_prompt, ExemplarMode, MockModel, PromptBundle, DEFAULT_INSTRUCTIONS};
use crate::rollout::RolloutConfig;
use crate::scripted_env::{ExecMode, ExecutionOutcome, ScriptedWorld};
use crate::synth::candidate;
use crate::task_pool::{EmbeddingVector, ExemplarPool};
use crate::trace::{parse_solution, ApiCatalog, ArticulationTree, Joint, Solution, TaskSpec};

pub mod fold_chair {
    use super::*;

    pub const TASK_JSON: &str = include_str!("../fixtures/fold_chair/task.json");
    pub const WORLD_JSON: &str = include_str!("../fixtures/fold_chair/world.json");
    pub const ROLLOUT_1: &str = include_str!("../fixtures/fold_chair/rollout1.txt");
    pub const ROLLOUT_2: &str = include_str!("../fixtures/fold_chair/rollout2.txt");
    /// Completer answer continuing rollout 2 after its first subtask.
    pub const ROLLOUT_3_CONTINUATION: &str = include_str!("../fixtures/fold_chair/rollout3_continuation.txt");

    pub fn task() -> TaskSpec {
        serde_json::from_str(TASK_JSON).expect("fixture task parses")
    }

    pub fn world() -> ScriptedWorld {
        serde_json::from_str(WORLD_JSON).expect("fixture world parses")
    }

    pub fn prompt() -> PromptBundle {
        build_prompt(&task(), &[], &ApiCatalog::default(), DEFAULT_INSTRUCTIONS, ExemplarMode::Builtin)
    }

    /// Replies keyed by prompt hash: the two base rollouts in order, the
    /// rollout 3 continuation after substep 1, and an empty continuation
    /// after substep 2.
    pub fn bank() -> BTreeMap<String, Vec<String>> {
        let bundle = prompt();
        let base = parse_solution("Fold Chair", ROLLOUT_2).expect("fixture rollout parses");
        BTreeMap::from([
            (bundle.hash(), vec![ROLLOUT_1.to_string(), ROLLOUT_2.to_string()]),
            (build_completion_prompt(&bundle, &base, 1).hash(), vec![ROLLOUT_3_CONTINUATION.to_string()]),
            (build_completion_prompt(&bundle, &base, 2).hash(), vec![String::new()]),
        ])
    }

    pub fn mock() -> MockModel {
        MockModel::new(bank(), 0).expect("bank is nonempty")
    }

    /// Two bases, branching from base 2 only, one completion per substep.
    pub fn rollout_config() -> RolloutConfig {
        RolloutConfig {
            n_base: 2,
            completions_per_substep: 1,
            branch_bases: vec![2],
            mode: ExecMode::RunAll,
            retries: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Retrieval table

pub struct RetrievalCase {
    pub query: &'static str,
    pub expected: [(&'static str, f64); 2],
}

pub const TABLE1: [RetrievalCase; 3] = [
    RetrievalCase { query: "Change Fan Direction", expected: [("Change Lamp Direction", 0.897), ("Rotate Fan Rotor", 0.677)] },
    RetrievalCase { query: "Open Pot Lid", expected: [("Remove Pot Lid", 0.829), ("Open Toilet Lid", 0.772)] },
    RetrievalCase { query: "Adjust Display Angle", expected: [("Tilt Display Screen", 0.909), ("Rotate Laptop Screen", 0.824)] },
];

/// Query `q` is the basis vector `e_q`; the rank-`r` similar task of query
/// `q` is `w e_q + sqrt(1 - w^2) e_(3 + 2q + r)`; every other pool task gets
/// its own basis vector past those.
pub const TABLE1_DIM: usize = 24;

fn basis(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; TABLE1_DIM];
    v[i] = 1.0;
    v
}

pub fn table1_query(case: usize) -> EmbeddingVector {
    EmbeddingVector::new(basis(case)).expect("unit vector")
}

pub fn table1_embedding(task: &str) -> EmbeddingVector {
    for (q, case) in TABLE1.iter().enumerate() {
        for (r, (name, w)) in case.expected.iter().enumerate() {
            if *name == task {
                let mut v = basis(q);
                v[3 + 2 * q + r] = (1.0 - w * w).sqrt();
                v[q] = *w;
                return EmbeddingVector::new(v).expect("finite");
            }
        }
    }
    let others: Vec<&str> = INITIAL_POOL.iter().map(|t| t.0).filter(|n| !is_table1_neighbor(n)).collect();
    let idx = others.iter().position(|n| *n == task).expect("task in the initial pool");
    EmbeddingVector::new(basis(9 + idx)).expect("unit vector")
}

fn is_table1_neighbor(name: &str) -> bool {
    TABLE1.iter().any(|c| c.expected.iter().any(|(n, _)| *n == name))
}

/// The initial pool with the fixture embeddings.
pub fn table1_pool() -> ExemplarPool {
    let mut pool = ExemplarPool::new(TABLE1_DIM, "table1-fixture");
    for (task, sol) in initial_pool_exemplars() {
        let e = table1_embedding(&task.name);
        pool.insert_with_embedding(task, sol, e).expect("fixture entry is valid");
    }
    pool
}

// ---------------------------------------------------------------------------
// Initial exemplar pool

/// (name, object, description) of the 15 tasks the pool starts with.
pub const INITIAL_POOL: [(&str, &str, &str); 15] = [
    ("Change Lamp Direction", "Lamp", "The robot arm rotates the lamp head to point in another direction."),
    ("Rotate Fan Rotor", "Fan", "The robot arm rotates the rotor of the fan."),
    ("Remove Pot Lid", "Pot", "The robot arm lifts the lid off the pot."),
    ("Open Toilet Lid", "Toilet", "The robot arm lifts the toilet lid open."),
    ("Tilt Display Screen", "Display", "The robot arm tilts the display screen around its hinge."),
    ("Rotate Laptop Screen", "Laptop", "The robot arm rotates the laptop screen around its hinge."),
    ("Open Door", "Door", "The robot arm opens the door by rotating it around its hinge."),
    ("Open Laptop Screen", "Laptop", "The robot arm opens the laptop screen."),
    ("Open Microwave Door", "Microwave", "The robot arm opens the microwave door."),
    ("Close Trashcan Lid", "TrashCan", "The robot arm closes the lid of the trash can."),
    ("Open Kettle Lid", "Kettle", "The robot arm opens the lid of the kettle."),
    ("Rotate Display Screen", "Display", "The robot arm rotates the display screen."),
    ("Power On Printer", "Printer", "The robot arm presses the power button of the printer."),
    ("Open Partial Box Lid", "Box", "The robot arm opens the box lid part of the way."),
    ("Move Door Slightly Open", "Door", "The robot arm moves the door to a slightly open position."),
];

pub fn simple_task(name: &str, object: &str, description: &str) -> TaskSpec {
    let mut t = TaskSpec::named(name, description);
    t.object = object.to_string();
    t.articulation_tree = ArticulationTree {
        links: vec!["base".into(), "link_0".into()],
        joints: vec![Joint { name: "joint_0".into(), joint_type: "revolute".into(), parent: "base".into(), child: "link_0".into() }],
    };
    t.relevant_links = vec!["link_0".into()];
    t.relevant_joints = vec!["joint_0".into()];
    t
}

/// Each initial task with a successfully executed two-subtask solution.
pub fn initial_pool_exemplars() -> Vec<(TaskSpec, Solution)> {
    INITIAL_POOL
        .iter()
        .map(|(name, object, description)| {
            let task = simple_task(name, object, description);
            let mut sol = candidate(&task, 2, None);
            sol.overall_success = Some(true);
            (task, sol)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Corpus statistics

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusRow {
    pub task: &'static str,
    pub successes: usize,
    pub solutions: usize,
    pub subtask_successes: usize,
    pub subtasks: usize,
}

const fn row(task: &'static str, successes: usize, solutions: usize, subtask_successes: usize, subtasks: usize) -> CorpusRow {
    CorpusRow { task, successes, solutions, subtask_successes, subtasks }
}

/// Per-task success counts of the 30-task generated corpus.
pub const APPENDIX_CORPUS: [CorpusRow; 30] = [
    row("Adjust Display Angle", 6, 6, 9, 9),
    row("Adjust Fan Speed", 0, 3, 0, 7),
    row("Adjust Laptop Screen Angle", 5, 6, 8, 9),
    row("Close Stapler Lid", 2, 4, 3, 8),
    row("close the oven door", 0, 3, 0, 6),
    row("Close Trashcan Lid", 3, 5, 4, 8),
    row("Fold Chair", 1, 4, 3, 9),
    row("Move Door Slightly Open", 3, 6, 6, 13),
    row("Move Laptop to a Different Location", 1, 4, 4, 12),
    row("Open Door", 0, 3, 0, 6),
    row("Open Kettle Lid", 5, 6, 8, 11),
    row("Open Laptop Screen", 4, 5, 6, 8),
    row("Open Lighter Lid", 0, 3, 0, 6),
    row("Open Microwave Door", 7, 9, 11, 13),
    row("Open Partial Box Lid", 6, 8, 9, 11),
    row("Open Pot Lid", 5, 6, 8, 9),
    row("Open Stapler Lid", 0, 3, 0, 6),
    row("Open Trash Can Lid", 4, 7, 10, 15),
    row("Power On Printer", 2, 5, 7, 13),
    row("Press Button to Access Menu", 0, 3, 0, 6),
    row("Press Button to Change Channel", 1, 3, 2, 7),
    row("Rotate Display Screen", 6, 7, 8, 10),
    row("Rotate Fan Rotor", 5, 7, 7, 10),
    row("Rotate Laptop Screen", 6, 7, 8, 10),
    row("Rotate Safe Knob", 3, 6, 7, 19),
    row("Scroll Wheel", 1, 4, 3, 11),
    row("Set Clock Minute Hand", 1, 4, 3, 11),
    row("Stop Globe Rotation", 1, 4, 2, 6),
    row("Tilt Display Screen", 4, 5, 6, 9),
    row("Turn On Fan", 1, 4, 2, 9),
];

/// Execution outcomes consistent with one row: `successes` all-true
/// solutions, every other solution with at least one failed subtask, and
/// the row's subtask totals.
pub fn row_outcomes(r: &CorpusRow) -> Vec<ExecutionOutcome> {
    let failed = r.solutions - r.successes;
    // subtasks inside successful solutions
    let a = if failed == 0 {
        r.subtasks
    } else {
        let even = (r.subtasks * r.successes + r.solutions / 2) / r.solutions;
        even.max(r.successes).min(r.subtask_successes.min(r.subtasks - failed))
    };
    let spread = |total: usize, parts: usize| -> Vec<usize> {
        (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
    };
    let mut out: Vec<ExecutionOutcome> = spread(a, r.successes)
        .into_iter()
        .map(|len| ExecutionOutcome { subtask_success: vec![true; len], overall_success: true, steps_executed: len })
        .collect();
    let mut fails: Vec<Vec<bool>> = spread(r.subtasks - a, failed).into_iter().map(|len| vec![false; len]).collect();
    // place the remaining true bits round-robin, leaving one false per solution
    let mut left = r.subtask_successes - a;
    while left > 0 {
        let before = left;
        for bits in fails.iter_mut() {
            if left == 0 {
                break;
            }
            if let Some(slot) = bits.iter().skip(1).position(|b| !b) {
                bits[slot + 1] = true;
                left -= 1;
            }
        }
        assert!(left < before, "row {} cannot be realized", r.task);
    }
    out.extend(fails.into_iter().map(|bits| {
        let n = bits.len();
        ExecutionOutcome { subtask_success: bits, overall_success: false, steps_executed: n }
    }));
    out
}
