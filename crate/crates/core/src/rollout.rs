//! Automated reward labeling by exhaustive substep branching.
//!
//! For every base solution `(i, 0, 0)` and every substep `j` the completer
//! regenerates the rest of the solution `completions_per_substep` times,
//! giving completions `(i, j, k)`. All nodes are executed and every subtask
//! receives reward 1 iff it succeeded and the solution it belongs to
//! succeeded.
//!
//! A completion's first `j` subtasks are the base's subtasks, not new ones:
//! they carry the base node's labels. Only the subtasks the completer wrote
//! are labeled from the completion's own outcome.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_io::{build_completion_prompt, ModelClient, ModelError, PromptBundle};
use crate::scripted_env::{EnvError, ExecMode, ExecutionOutcome, Executor};
use crate::trace::{parse_solution, parse_subtasks, prefix, SceneConfiguration, Solution, Subtask, TaskSpec, TracePrefix};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no parseable solution after {attempts} attempts per generation")]
    ExhaustedRetries { attempts: usize },
    #[error("node {0} has not been executed")]
    UnexecutedNode(usize),
    #[error("substep {j} out of range 1..={len}")]
    SubstepOutOfRange { j: usize, len: usize },
    #[error("no base solution {0}")]
    UnknownBase(usize),
    #[error("completion does not start with the first {0} subtasks of its base")]
    PrefixMismatch(usize),
    #[error("base solution {0} already present")]
    DuplicateBase(usize),
    #[error("invalid rollout config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

/// Tree coordinates: base `i` (1-based), branch substep `j` (0 for bases),
/// completion `k` (0 for bases).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Origin {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Origin {
    pub fn base(i: usize) -> Self {
        Origin { i, j: 0, k: 0 }
    }

    pub fn is_base(&self) -> bool {
        self.j == 0 && self.k == 0
    }
}

impl From<[usize; 3]> for Origin {
    fn from([i, j, k]: [usize; 3]) -> Self {
        Origin { i, j, k }
    }
}

impl From<Origin> for [usize; 3] {
    fn from(o: Origin) -> Self {
        [o.i, o.j, o.k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub index: NodeId,
    pub origin: Origin,
    /// Base node a completion branches from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<NodeId>,
    pub solution: Solution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<ExecutionOutcome>,
    /// Why the node could not be generated or executed; failed nodes are
    /// labeled all-zero and emit no prefixes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

/// A completion identical to an existing node: recorded, never executed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupRecord {
    pub origin: Origin,
    pub same_as: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    Node(NodeId),
    Duplicate(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionTree {
    pub task: TaskSpec,
    nodes: Vec<TreeNode>,
    #[serde(default)]
    dedups: Vec<DedupRecord>,
}

impl SolutionTree {
    pub fn new(task: TaskSpec) -> Self {
        SolutionTree { task, nodes: Vec::new(), dedups: Vec::new() }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.0]
    }

    pub fn dedups(&self) -> &[DedupRecord] {
        &self.dedups
    }

    pub fn base_node(&self, i: usize) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.origin == Origin::base(i)).map(|n| n.index)
    }

    pub fn add_base(&mut self, i: usize, solution: Solution) -> Result<NodeId, RolloutError> {
        if self.base_node(i).is_some() {
            return Err(RolloutError::DuplicateBase(i));
        }
        let id = NodeId(self.nodes.len());
        let failed = solution.degenerate.then(|| "degenerate generation".to_string());
        self.nodes.push(TreeNode { index: id, origin: Origin::base(i), parent: None, solution, outcome: None, failed });
        Ok(id)
    }

    /// Adds completion `(i, j, k)`, or records it as a duplicate of an
    /// existing node with identical content.
    pub fn add_completion(&mut self, i: usize, j: usize, k: usize, solution: Solution) -> Result<Insertion, RolloutError> {
        let base_id = self.base_node(i).ok_or(RolloutError::UnknownBase(i))?;
        let base = &self.nodes[base_id.0].solution;
        if j == 0 || j > base.len() {
            return Err(RolloutError::SubstepOutOfRange { j, len: base.len() });
        }
        let shares = solution.len() >= j
            && solution.subtasks[..j].iter().zip(&base.subtasks[..j]).all(|(a, b)| a.same_content(b));
        if !shares {
            return Err(RolloutError::PrefixMismatch(j));
        }
        let origin = Origin { i, j, k };
        if let Some(existing) = self.nodes.iter().find(|n| n.solution.same_content(&solution)) {
            let same_as = existing.index;
            self.dedups.push(DedupRecord { origin, same_as });
            return Ok(Insertion::Duplicate(same_as));
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(TreeNode { index: id, origin, parent: Some(base_id), solution, outcome: None, failed: None });
        Ok(Insertion::Node(id))
    }

    pub fn record_outcome(&mut self, id: NodeId, outcome: ExecutionOutcome) {
        self.nodes[id.0].outcome = Some(outcome);
    }

    pub fn mark_failed(&mut self, id: NodeId, reason: impl Into<String>) {
        let node = &mut self.nodes[id.0];
        node.failed = Some(reason.into());
        if node.outcome.is_none() {
            node.outcome = Some(ExecutionOutcome::all_failed(node.solution.len()));
        }
    }

    /// Number of leading subtasks a node inherits from its base.
    pub fn shared_len(&self, id: NodeId) -> usize {
        self.nodes[id.0].origin.j
    }

    /// Executes every node without an outcome. Failed nodes get an all-false
    /// outcome without running. Results are merged in node order.
    pub fn execute_pending(&mut self, executor: &Executor, mode: ExecMode) {
        let pending: Vec<(usize, Option<Result<ExecutionOutcome, String>>)> = self
            .nodes
            .par_iter()
            .filter(|n| n.outcome.is_none())
            .map(|n| {
                let res = match n.failed {
                    Some(_) => None,
                    None => Some(executor.execute_solution(&n.solution, mode).map_err(|e| e.to_string())),
                };
                (n.index.0, res)
            })
            .collect();
        for (idx, res) in pending {
            match res {
                Some(Ok(outcome)) => self.record_outcome(NodeId(idx), outcome),
                Some(Err(reason)) => self.mark_failed(NodeId(idx), reason),
                None => self.mark_failed(NodeId(idx), self.nodes[idx].failed.clone().unwrap_or_default()),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Rewards

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardTable {
    rewards: BTreeMap<NodeId, Vec<u8>>,
}

impl RewardTable {
    pub fn get(&self, node: NodeId, m: usize) -> Option<u8> {
        self.rewards.get(&node).and_then(|r| r.get(m.checked_sub(1)?).copied())
    }

    pub fn node_rewards(&self, node: NodeId) -> &[u8] {
        self.rewards.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The scene configuration shares the label of the node's `m = 1` prefix.
    pub fn scene_label(&self, node: NodeId) -> Option<u8> {
        self.get(node, 1)
    }

    pub fn len(&self) -> usize {
        self.rewards.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Applies the label rule to an executed tree.
pub fn label_rewards(tree: &SolutionTree) -> Result<RewardTable, RolloutError> {
    let mut table = RewardTable::default();
    for node in tree.nodes() {
        let outcome = node.outcome.as_ref().ok_or(RolloutError::UnexecutedNode(node.index.0))?;
        let shared = tree.shared_len(node.index);
        let mut row = Vec::with_capacity(node.solution.len());
        for m in 1..=node.solution.len() {
            let r = match node.parent {
                Some(base) if m <= shared => table.get(base, m).unwrap_or(0),
                _ if node.failed.is_some() => 0,
                _ => u8::from(outcome.subtask_success.get(m - 1).copied().unwrap_or(false) && outcome.overall_success),
            };
            row.push(r);
        }
        table.rewards.insert(node.index, row);
    }
    Ok(table)
}

// ---------------------------------------------------------------------------
// Generation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub n_base: usize,
    pub completions_per_substep: usize,
    /// 1-based base indices to branch from; empty means every base.
    pub branch_bases: Vec<usize>,
    pub mode: ExecMode,
    /// Extra attempts for an unparseable generation.
    pub retries: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            n_base: 3,
            completions_per_substep: 3,
            branch_bases: Vec::new(),
            mode: ExecMode::RunAll,
            retries: 2,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.n_base == 0 || self.completions_per_substep == 0 {
            return Err(RolloutError::Config("counts must be at least 1".into()));
        }
        if let Some(i) = self.branch_bases.iter().find(|i| **i == 0 || **i > self.n_base) {
            return Err(RolloutError::Config(format!("branch base {i} outside 1..={}", self.n_base)));
        }
        Ok(())
    }

    fn branches(&self, i: usize) -> bool {
        self.branch_bases.is_empty() || self.branch_bases.contains(&i)
    }
}

/// Samples `n` base solutions. A generation that stays unparseable after
/// `retries` extra attempts becomes a degenerate single-subtask failure;
/// if every generation degenerates the call fails.
pub fn generate_base_solutions(
    policy: &dyn ModelClient,
    task: &TaskSpec,
    bundle: &PromptBundle,
    n: usize,
    retries: usize,
) -> Result<Vec<Solution>, RolloutError> {
    if n == 0 {
        return Err(RolloutError::Config("N must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut last = String::new();
        let mut parsed = None;
        for _ in 0..=retries {
            let reply = policy.generate(bundle)?;
            match parse_solution(&task.name, &reply) {
                Ok(sol) => {
                    parsed = Some(sol);
                    break;
                }
                Err(e) => {
                    log::debug!("unparseable generation for {}: {e}", task.name);
                    last = reply;
                }
            }
        }
        out.push(parsed.unwrap_or_else(|| Solution::degenerate(&task.name, &last)));
    }
    if out.iter().all(|s| s.degenerate) {
        return Err(RolloutError::ExhaustedRetries { attempts: retries + 1 });
    }
    Ok(out)
}

/// One completer answer: the base's first `j` subtasks followed by the
/// completer's continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub solution: Solution,
    /// Set when every attempt was unparseable; the solution then holds only
    /// the inherited prefix.
    pub parse_error: Option<String>,
}

pub fn complete_from_substep(
    completer: &dyn ModelClient,
    bundle: &PromptBundle,
    base: &Solution,
    j: usize,
    completions: usize,
    retries: usize,
) -> Result<Vec<Completion>, RolloutError> {
    if j == 0 || j > base.len() {
        return Err(RolloutError::SubstepOutOfRange { j, len: base.len() });
    }
    if completions == 0 {
        return Err(RolloutError::Config("completions must be at least 1".into()));
    }
    let prompt = build_completion_prompt(bundle, base, j);
    let mut out = Vec::with_capacity(completions);
    for _ in 0..completions {
        let mut continuation: Result<Vec<Subtask>, String> = Err(String::new());
        for _ in 0..=retries {
            let reply = completer.generate(&prompt)?;
            continuation = parse_subtasks(&reply).map_err(|e| e.to_string());
            if continuation.is_ok() {
                break;
            }
        }
        let mut subtasks = base.subtasks[..j].to_vec();
        let parse_error = match continuation {
            Ok(more) => {
                subtasks.extend(more);
                None
            }
            Err(e) => Some(e),
        };
        let solution = Solution {
            task: base.task.clone(),
            scene: base.scene.clone(),
            subtasks,
            overall_success: None,
            degenerate: false,
        };
        out.push(Completion { solution, parse_error });
    }
    Ok(out)
}

/// Builds, executes and labels the full tree for one task.
pub fn run_arlet_mcts(
    policy: &dyn ModelClient,
    completer: &dyn ModelClient,
    executor: &Executor,
    task: &TaskSpec,
    bundle: &PromptBundle,
    config: &RolloutConfig,
) -> Result<(SolutionTree, RewardTable), RolloutError> {
    config.validate()?;
    let bases = generate_base_solutions(policy, task, bundle, config.n_base, config.retries)?;
    expand_tree(completer, executor, task, bundle, bases, config)
}

/// Same as [`run_arlet_mcts`] but starting from already generated bases.
pub fn expand_tree(
    completer: &dyn ModelClient,
    executor: &Executor,
    task: &TaskSpec,
    bundle: &PromptBundle,
    bases: Vec<Solution>,
    config: &RolloutConfig,
) -> Result<(SolutionTree, RewardTable), RolloutError> {
    config.validate()?;
    let mut tree = SolutionTree::new(task.clone());
    for (idx, base) in bases.into_iter().enumerate() {
        tree.add_base(idx + 1, base)?;
    }
    let base_ids: Vec<NodeId> = tree.nodes().iter().map(|n| n.index).collect();
    for base_id in base_ids {
        let node = tree.node(base_id);
        let i = node.origin.i;
        if node.failed.is_some() || !config.branches(i) {
            continue;
        }
        let base = node.solution.clone();
        for j in 1..=base.len() {
            let completions =
                complete_from_substep(completer, bundle, &base, j, config.completions_per_substep, config.retries)?;
            for (k, c) in completions.into_iter().enumerate() {
                if let Insertion::Node(id) = tree.add_completion(i, j, k + 1, c.solution)? {
                    if let Some(err) = c.parse_error {
                        tree.mark_failed(id, format!("unparseable completion: {err}"));
                    }
                }
            }
        }
    }
    tree.execute_pending(executor, config.mode);
    let rewards = label_rewards(&tree)?;
    Ok((tree, rewards))
}

// ---------------------------------------------------------------------------
// Dataset

/// One verifier training record. Serialized as a JSON line
/// `{task_name, m, scene, subtasks, label, provenance: [i, j, k, m]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrefix {
    pub task_name: String,
    pub m: usize,
    pub scene: SceneConfiguration,
    pub subtasks: Vec<Subtask>,
    pub label: u8,
    pub provenance: [usize; 4],
}

impl LabeledPrefix {
    pub fn prefix(&self) -> TracePrefix {
        TracePrefix { scene: self.scene.clone(), subtasks: self.subtasks.clone() }
    }

    /// `(i, j, k)` of the node the record was first emitted from.
    pub fn solution_origin(&self) -> Origin {
        Origin { i: self.provenance[0], j: self.provenance[1], k: self.provenance[2] }
    }
}

/// Emits one record per node and prefix length. A prefix already emitted
/// with the same label is skipped; the same prefix with a different label is
/// emitted again under its own provenance. Failed nodes emit nothing.
pub fn emit_dataset(tree: &SolutionTree, rewards: &RewardTable) -> Result<Vec<LabeledPrefix>, RolloutError> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for node in tree.nodes() {
        if node.outcome.is_none() {
            return Err(RolloutError::UnexecutedNode(node.index.0));
        }
        if node.failed.is_some() {
            continue;
        }
        for m in 1..=node.solution.len() {
            let label = rewards.get(node.index, m).ok_or(RolloutError::UnexecutedNode(node.index.0))?;
            let pre = prefix(&node.solution, m).expect("m within bounds");
            let key = prefix_key(&pre, label);
            if !seen.insert(key) {
                continue;
            }
            let o = node.origin;
            out.push(LabeledPrefix {
                task_name: tree.task.name.clone(),
                m,
                scene: pre.scene,
                subtasks: strip_bits(pre.subtasks),
                label,
                provenance: [o.i, o.j, o.k, m],
            });
        }
    }
    Ok(out)
}

fn strip_bits(mut subs: Vec<Subtask>) -> Vec<Subtask> {
    subs.iter_mut().for_each(|s| s.success_bit = None);
    subs
}

fn prefix_key(p: &TracePrefix, label: u8) -> String {
    let mut parts: Vec<&[u8]> = vec![p.scene.raw_text.as_bytes()];
    for s in &p.subtasks {
        parts.push(s.name.as_bytes());
        parts.push(s.supervision.variant.fence_tag().as_bytes());
        parts.push(s.supervision.code.as_bytes());
    }
    let l = [label];
    parts.push(&l);
    hex::encode(crate::digest::sha256_bytes(&parts))
}

/// A seeded random tree with random outcomes, for property tests of the
/// label rule. Subtasks come from a small vocabulary so completions often
/// collide with existing nodes; a few nodes are marked failed.
pub fn random_executed_tree(seed: u64) -> SolutionTree {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<Subtask> = (0..4)
        .map(|v| {
            Subtask::new(
                format!("step {v}"),
                crate::trace::Supervision::new(
                    crate::trace::Variant::Primitive,
                    format!("rgbs, final_state = grasp_object(self, \"o{v}\")\nsuccess = check_grasped(self, \"o{v}\")"),
                ),
            )
        })
        .collect();
    let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Subtask> {
        (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect()
    };
    let mut tree = SolutionTree::new(TaskSpec::named(format!("random {seed}"), ""));
    for i in 1..=rng.gen_range(1..=3) {
        let len = rng.gen_range(1..=4);
        let subs = draw(&mut rng, len);
        let sol = Solution::new(tree.task.name.clone(), SceneConfiguration::default(), subs).expect("nonempty");
        tree.add_base(i, sol).expect("fresh base index");
    }
    let bases: Vec<(usize, Solution)> = tree.nodes().iter().map(|n| (n.origin.i, n.solution.clone())).collect();
    for (i, base) in bases {
        for j in 1..=base.len() {
            for k in 1..=rng.gen_range(1..=2) {
                let extra = rng.gen_range(0..=3);
                let mut subs = base.subtasks[..j].to_vec();
                subs.extend(draw(&mut rng, extra));
                let sol = Solution { subtasks: subs, ..base.clone() };
                tree.add_completion(i, j, k, sol).expect("valid completion");
            }
        }
    }
    for idx in 0..tree.nodes().len() {
        let id = NodeId(idx);
        if rng.gen_bool(0.05) {
            tree.mark_failed(id, "random failure");
            continue;
        }
        let bits: Vec<bool> = (0..tree.node(id).solution.len()).map(|_| rng.gen_bool(0.75)).collect();
        let overall = bits.iter().all(|b| *b) && rng.gen_bool(0.8);
        let n = bits.len();
        tree.record_outcome(id, ExecutionOutcome { subtask_success: bits, overall_success: overall, steps_executed: n });
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Supervision, Variant};

    fn sub(name: &str) -> Subtask {
        Subtask::new(name, Supervision::new(Variant::Primitive, format!("success = check_grasped(self, \"{name}\")")))
    }

    fn sol(names: &[&str]) -> Solution {
        Solution::new("t", SceneConfiguration::default(), names.iter().map(|n| sub(n)).collect()).unwrap()
    }

    fn outcome(bits: &[bool], overall: bool) -> ExecutionOutcome {
        ExecutionOutcome { subtask_success: bits.to_vec(), overall_success: overall, steps_executed: bits.len() }
    }

    #[test]
    fn conjunction_rule() {
        let mut tree = SolutionTree::new(TaskSpec::named("t", ""));
        let a = tree.add_base(1, sol(&["a", "b"])).unwrap();
        let b = tree.add_base(2, sol(&["c", "d"])).unwrap();
        tree.record_outcome(a, outcome(&[true, true], true));
        tree.record_outcome(b, outcome(&[true, false], false));
        let r = label_rewards(&tree).unwrap();
        assert_eq!(r.node_rewards(a), &[1, 1]);
        assert_eq!(r.node_rewards(b), &[0, 0]);
        assert_eq!(r.scene_label(a), Some(1));
    }

    #[test]
    fn completion_inherits_prefix_labels() {
        let mut tree = SolutionTree::new(TaskSpec::named("t", ""));
        let base = tree.add_base(1, sol(&["a", "b"])).unwrap();
        let Insertion::Node(c) = tree.add_completion(1, 1, 1, sol(&["a", "x"])).unwrap() else { panic!() };
        tree.record_outcome(base, outcome(&[true, true], true));
        tree.record_outcome(c, outcome(&[true, false], false));
        let r = label_rewards(&tree).unwrap();
        assert_eq!(r.node_rewards(c), &[1, 0]);
    }

    #[test]
    fn completion_must_share_prefix_and_dedups() {
        let mut tree = SolutionTree::new(TaskSpec::named("t", ""));
        tree.add_base(1, sol(&["a", "b"])).unwrap();
        assert!(matches!(tree.add_completion(1, 1, 1, sol(&["z", "b"])), Err(RolloutError::PrefixMismatch(1))));
        assert!(matches!(tree.add_completion(1, 3, 1, sol(&["a", "b"])), Err(RolloutError::SubstepOutOfRange { .. })));
        assert!(matches!(tree.add_completion(2, 1, 1, sol(&["a"])), Err(RolloutError::UnknownBase(2))));
        assert_eq!(tree.add_completion(1, 2, 1, sol(&["a", "b"])).unwrap(), Insertion::Duplicate(NodeId(0)));
        assert_eq!(tree.dedups().len(), 1);
        assert_eq!(tree.nodes().len(), 1);
    }

    #[test]
    fn dataset_emission() {
        let mut tree = SolutionTree::new(TaskSpec::named("t", ""));
        let a = tree.add_base(1, sol(&["a", "b"])).unwrap();
        assert!(matches!(emit_dataset(&tree, &RewardTable::default()), Err(RolloutError::UnexecutedNode(0))));
        let Insertion::Node(c) = tree.add_completion(1, 1, 1, sol(&["a", "x"])).unwrap() else { panic!() };
        tree.record_outcome(a, outcome(&[true, true], true));
        tree.record_outcome(c, outcome(&[true, true], true));
        let r = label_rewards(&tree).unwrap();
        let data = emit_dataset(&tree, &r).unwrap();
        // the completion's m = 1 prefix repeats the base's and is dropped
        assert_eq!(data.len(), 3);
        assert_eq!(data.iter().map(|d| d.label).collect::<Vec<_>>(), vec![1, 1, 1]);
        assert_eq!(data[2].provenance, [1, 1, 1, 2]);
        let line = serde_json::to_value(&data[0]).unwrap();
        for key in ["task_name", "m", "scene", "subtasks", "label", "provenance"] {
            assert!(line.get(key).is_some(), "{key}");
        }
        assert!(line["subtasks"][0].get("success_bit").is_none());
    }

    #[test]
    fn conflicting_labels_are_both_kept() {
        let mut tree = SolutionTree::new(TaskSpec::named("t", ""));
        let a = tree.add_base(1, sol(&["a", "b"])).unwrap();
        let b = tree.add_base(2, sol(&["a", "c"])).unwrap();
        tree.record_outcome(a, outcome(&[true, true], true));
        tree.record_outcome(b, outcome(&[true, false], false));
        let r = label_rewards(&tree).unwrap();
        let data = emit_dataset(&tree, &r).unwrap();
        let m1: Vec<_> = data.iter().filter(|d| d.m == 1).map(|d| (d.label, d.provenance)).collect();
        assert_eq!(m1, vec![(1, [1, 0, 0, 1]), (0, [2, 0, 0, 1])]);
    }

    #[test]
    fn config_validation() {
        assert!(RolloutConfig { n_base: 0, ..Default::default() }.validate().is_err());
        assert!(RolloutConfig { branch_bases: vec![4], ..Default::default() }.validate().is_err());
        assert!(RolloutConfig::default().validate().is_ok());
    }

    #[test]
    fn tree_round_trips_through_json() {
        let mut tree = SolutionTree::new(TaskSpec::named("t", ""));
        let a = tree.add_base(1, sol(&["a"])).unwrap();
        tree.record_outcome(a, outcome(&[true], true));
        let json = serde_json::to_string(&tree).unwrap();
        assert!(json.contains("\"origin\":[1,0,0]"));
        let back: SolutionTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tree);
    }
}
