//! Rule-based execution oracle standing in for the robot simulator.
//!
//! A subtask succeeds iff
//! 1. every API call is allowed for its variant,
//! 2. every object / link / joint named in a catalog call exists in the world,
//! 3. the variant's structure holds (primitive: execution result and
//!    `success` assigned; reward: every `reward_*` component reaches the
//!    combined `reward`, and `reward, success` is returned),
//! 4. no rule in the world's rule table rejects it.
//!
//! World fixture format (JSON):
//!
//! ```json
//! {
//!   "objects": {"FoldingChair": {"links": ["base", "link_0"], "joints": ["joint_0"],
//!                                "joint_limits": {"joint_0": [0.0, 1.57]}}},
//!   "goal": {"kind": "final_references", "any_of": ["joint_0"]},
//!   "rules": [{"kind": "magic_joint_target", "variant": "reward"}],
//!   "noise": {"epsilon": 0.0, "seed": 0}
//! }
//! ```
//!
//! Rule vocabulary. `variant` is optional on every rule and restricts it to
//! `"primitive"` or `"reward"` supervisions.
//! - `forbid_literal {literal}`: rejects when any string literal equals `literal`.
//! - `forbid_api {name}`: rejects when `name` is among the API calls.
//! - `require_api {name}`: rejects when no call (free or attribute) is named `name`.
//! - `forbid_substring {text}`: rejects when the comment-stripped code contains `text`.
//! - `magic_joint_target {}`: rejects when a variable assigned a bare numeric
//!   constant (`np.pi`, `1.57`, ...) shares a statement with a
//!   `get_joint_state` result.
//!
//! Goal vocabulary, checked against the final subtask:
//! - `always {}`: no extra condition.
//! - `final_references {any_of}`: the final subtask assigns `success` and one
//!   of its catalog calls names a link or joint in `any_of`. An empty list
//!   accepts any link or joint of the world.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_bytes;
use crate::inspect::inspect;
use crate::trace::{logical_lines, scan_calls, validate_apis, ApiCatalog, Solution, Subtask, TaskSpec, Variant};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("scene object `{0}` is not in the world")]
    WorldMismatch(String),
    #[error("solution has no subtasks")]
    EmptySolution,
    #[error("world fixture: {0}")]
    Fixture(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    #[serde(default)]
    pub links: BTreeSet<String>,
    #[serde(default)]
    pub joints: BTreeSet<String>,
    #[serde(default)]
    pub joint_limits: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    Always,
    FinalReferences {
        #[serde(default)]
        any_of: Vec<String>,
    },
}

impl Default for Goal {
    fn default() -> Self {
        Goal::FinalReferences { any_of: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    ForbidLiteral { literal: String },
    ForbidApi { name: String },
    RequireApi { name: String },
    ForbidSubstring { text: String },
    MagicJointTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(flatten)]
    pub kind: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
}

impl Rule {
    pub fn new(kind: RuleKind) -> Self {
        Rule { kind, variant: None }
    }

    pub fn only(mut self, variant: Variant) -> Self {
        self.variant = Some(variant);
        self
    }

    /// `true` when the rule rejects the subtask.
    fn rejects(&self, sub: &Subtask, catalog: &ApiCatalog) -> bool {
        let sup = &sub.supervision;
        if self.variant.is_some_and(|v| v != sup.variant) {
            return false;
        }
        match &self.kind {
            RuleKind::ForbidLiteral { literal } => string_literals(&sup.code).iter().any(|s| s == literal),
            RuleKind::ForbidApi { name } => sup.api_calls.iter().any(|c| c == name),
            RuleKind::RequireApi { name } => !scan_calls(&sup.code).iter().any(|c| &c.name == name),
            RuleKind::ForbidSubstring { text } => logical_lines(&sup.code).join("\n").contains(text.as_str()),
            RuleKind::MagicJointTarget => !inspect(sup, catalog).magic_targets.is_empty(),
        }
    }
}

fn string_literals(code: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in code.lines() {
        let mut chars = line.chars();
        while let Some(c) = chars.next() {
            if c == '#' {
                break;
            }
            if c == '"' || c == '\'' {
                let s: String = chars.by_ref().take_while(|&d| d != c).collect();
                out.push(s);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    /// Probability of flipping a subtask bit.
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedWorld {
    pub objects: BTreeMap<String, WorldObject>,
    #[serde(default)]
    pub goal: Goal,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub noise: Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    FailFast,
    #[default]
    RunAll,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub subtask_success: Vec<bool>,
    pub overall_success: bool,
    pub steps_executed: usize,
}

impl ExecutionOutcome {
    /// Outcome recorded for a node that could not be executed.
    pub fn all_failed(len: usize) -> Self {
        ExecutionOutcome { subtask_success: vec![false; len], overall_success: false, steps_executed: 0 }
    }
}

impl ScriptedWorld {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)?;
        let world: ScriptedWorld =
            serde_json::from_str(&text).map_err(|e| EnvError::Fixture(format!("{}: {e}", path.display())))?;
        world.validate()?;
        Ok(world)
    }

    /// A world holding the task's object with its articulation tree, the
    /// default goal over the task's relevant links and joints, and the
    /// magic-target rule.
    pub fn for_task(task: &TaskSpec) -> Self {
        let tree = &task.articulation_tree;
        let object = WorldObject {
            links: tree.links.iter().cloned().collect(),
            joints: tree.joints.iter().map(|j| j.name.clone()).collect(),
            joint_limits: BTreeMap::new(),
        };
        let name = if task.object.is_empty() { task.name.clone() } else { task.object.clone() };
        let any_of = task.relevant_links.iter().chain(&task.relevant_joints).cloned().collect();
        ScriptedWorld {
            objects: BTreeMap::from([(name, object)]),
            goal: Goal::FinalReferences { any_of },
            rules: vec![Rule::new(RuleKind::MagicJointTarget).only(Variant::RewardFunction)],
            noise: Noise::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if let Goal::FinalReferences { any_of } = &self.goal {
            for name in any_of {
                if !self.objects.values().any(|o| o.links.contains(name) || o.joints.contains(name)) {
                    return Err(EnvError::Fixture(format!("goal references unknown link/joint `{name}`")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.noise.epsilon) {
            return Err(EnvError::Fixture("noise epsilon must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Content hash of the world, used to key execution caches.
    pub fn fingerprint(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("world serializes");
        sha256_bytes(&[b"world", &json])
    }

    fn has_part(&self, object: &str, part: &str) -> bool {
        self.objects.get(object).is_some_and(|o| o.links.contains(part) || o.joints.contains(part))
    }

    fn goal_holds(&self, last: &Subtask, catalog: &ApiCatalog) -> bool {
        match &self.goal {
            Goal::Always => true,
            Goal::FinalReferences { any_of } => {
                let ins = inspect(&last.supervision, catalog);
                ins.has_success
                    && ins.references.iter().any(|r| match &r.part {
                        Some(p) if any_of.is_empty() => self.has_part(&r.object, p),
                        Some(p) => any_of.contains(p) && self.has_part(&r.object, p),
                        None => false,
                    })
            }
        }
    }

    fn noisy(&self, sub: &Subtask, bit: bool) -> bool {
        if self.noise.epsilon <= 0.0 {
            return bit;
        }
        let key = sha256_bytes(&[
            &self.noise.seed.to_le_bytes(),
            sub.supervision.variant.fence_tag().as_bytes(),
            sub.supervision.code.as_bytes(),
        ]);
        let mut rng = ChaCha8Rng::from_seed(key);
        if rng.gen::<f64>() < self.noise.epsilon {
            !bit
        } else {
            bit
        }
    }
}

/// Adjudicates one subtask. Never fails: malformed input is `false`.
pub fn execute_subtask(world: &ScriptedWorld, sub: &Subtask, catalog: &ApiCatalog) -> bool {
    world.noisy(sub, adjudicate(world, sub, catalog))
}

fn adjudicate(world: &ScriptedWorld, sub: &Subtask, catalog: &ApiCatalog) -> bool {
    let sup = &sub.supervision;
    if sup.code.trim().is_empty() || !validate_apis(sup, catalog).ok {
        return false;
    }
    let ins = inspect(sup, catalog);
    let names_ok = ins.references.iter().all(|r| match &r.part {
        _ if !world.objects.contains_key(&r.object) => false,
        Some(p) => world.has_part(&r.object, p),
        None => true,
    });
    names_ok
        && ins.structurally_sound(sup.variant)
        && !world.rules.iter().any(|rule| rule.rejects(sub, catalog))
}

pub fn execute_solution(
    world: &ScriptedWorld,
    sol: &Solution,
    catalog: &ApiCatalog,
    mode: ExecMode,
) -> Result<ExecutionOutcome, EnvError> {
    run_solution(world, sol, catalog, mode, |sub| execute_subtask(world, sub, catalog))
}

fn run_solution(
    world: &ScriptedWorld,
    sol: &Solution,
    catalog: &ApiCatalog,
    mode: ExecMode,
    mut exec: impl FnMut(&Subtask) -> bool,
) -> Result<ExecutionOutcome, EnvError> {
    if sol.subtasks.is_empty() {
        return Err(EnvError::EmptySolution);
    }
    if let Some(o) = sol.scene.objects.iter().find(|o| !world.objects.contains_key(&o.name)) {
        return Err(EnvError::WorldMismatch(o.name.clone()));
    }
    let mut bits = vec![false; sol.subtasks.len()];
    let mut steps = 0;
    for (bit, sub) in bits.iter_mut().zip(&sol.subtasks) {
        *bit = exec(sub);
        steps += 1;
        if !*bit && mode == ExecMode::FailFast {
            break;
        }
    }
    let last = sol.subtasks.last().expect("nonempty");
    let overall = bits.iter().all(|b| *b) && world.goal_holds(last, catalog);
    Ok(ExecutionOutcome { subtask_success: bits, overall_success: overall, steps_executed: steps })
}

/// Executes solutions against one world, caching subtask verdicts by
/// content so a subtask shared by several solutions is adjudicated once.
/// Safe to share across threads; a verdict is computed exactly once per key
/// even under concurrent requests.
pub struct Executor {
    world: Arc<ScriptedWorld>,
    catalog: Arc<ApiCatalog>,
    world_key: [u8; 32],
    cache: Mutex<HashMap<[u8; 32], Arc<OnceLock<bool>>>>,
    subtask_runs: AtomicUsize,
    solution_runs: AtomicUsize,
}

impl Executor {
    pub fn new(world: ScriptedWorld, catalog: ApiCatalog) -> Self {
        let world_key = world.fingerprint();
        Executor {
            world: Arc::new(world),
            catalog: Arc::new(catalog),
            world_key,
            cache: Mutex::new(HashMap::new()),
            subtask_runs: AtomicUsize::new(0),
            solution_runs: AtomicUsize::new(0),
        }
    }

    pub fn world(&self) -> &ScriptedWorld {
        &self.world
    }

    pub fn catalog(&self) -> &ApiCatalog {
        &self.catalog
    }

    /// Subtask adjudications actually performed (cache misses).
    pub fn subtask_runs(&self) -> usize {
        self.subtask_runs.load(Ordering::SeqCst)
    }

    pub fn solution_runs(&self) -> usize {
        self.solution_runs.load(Ordering::SeqCst)
    }

    pub fn execute_subtask(&self, sub: &Subtask) -> bool {
        let key = sha256_bytes(&[
            &self.world_key,
            sub.supervision.variant.fence_tag().as_bytes(),
            sub.supervision.code.as_bytes(),
        ]);
        let cell = {
            let mut cache = self.cache.lock().expect("cache lock poisoned");
            cache.entry(key).or_default().clone()
        };
        *cell.get_or_init(|| {
            self.subtask_runs.fetch_add(1, Ordering::SeqCst);
            execute_subtask(&self.world, sub, &self.catalog)
        })
    }

    pub fn execute_solution(&self, sol: &Solution, mode: ExecMode) -> Result<ExecutionOutcome, EnvError> {
        self.solution_runs.fetch_add(1, Ordering::SeqCst);
        run_solution(&self.world, sol, &self.catalog, mode, |sub| self.execute_subtask(sub))
    }
}

/// A seeded random world for property tests: 1..=3 objects with a few
/// links and joints each.
pub fn random_world(seed: u64) -> ScriptedWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = BTreeMap::new();
    for o in 0..rng.gen_range(1..=3) {
        let links: BTreeSet<String> = (0..rng.gen_range(1..=4)).map(|i| format!("link_{i}")).collect();
        let joints: BTreeSet<String> = (0..rng.gen_range(1..=3)).map(|i| format!("joint_{i}")).collect();
        let joint_limits = joints.iter().map(|j| (j.clone(), (0.0, rng.gen_range(0.5..3.2)))).collect();
        objects.insert(format!("Object{o}"), WorldObject { links, joints, joint_limits });
    }
    ScriptedWorld {
        objects,
        goal: Goal::default(),
        rules: vec![Rule::new(RuleKind::MagicJointTarget).only(Variant::RewardFunction)],
        noise: Noise::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{parse_subtask, SceneConfiguration, Supervision};

    fn chair_world() -> ScriptedWorld {
        serde_json::from_str(
            r#"{
              "objects": {"FoldingChair": {"links": ["base", "link_0"], "joints": ["joint_0"],
                                           "joint_limits": {"joint_0": [0.0, 1.57]}}},
              "goal": {"kind": "final_references", "any_of": ["joint_0"]},
              "rules": [{"kind": "magic_joint_target", "variant": "reward"}]
            }"#,
        )
        .unwrap()
    }

    fn grasp(link: &str) -> Subtask {
        parse_subtask(
            &format!(
                "subtask 1: grasp the seat\n```primitive\nrgbs, final_state = grasp_object_link(self, \"FoldingChair\", \"{link}\")\nsuccess = check_grasped(self, \"FoldingChair\", \"{link}\")\n```"
            ),
            None,
        )
        .unwrap()
    }

    fn lower(target: &str) -> Subtask {
        parse_subtask(
            &format!(
                "subtask 2: lower the seat\n```reward\ndef _compute_reward(self):\n    joint_angle = get_joint_state(self, \"FoldingChair\", \"joint_0\")\n    folded_angle = {target}\n    diff = np.abs(joint_angle - folded_angle)\n    reward_joint = -diff\n    reward = 5 * reward_joint\n    success = diff < 0.1\n    return reward, success\n```"
            ),
            None,
        )
        .unwrap()
    }

    fn solution(subs: Vec<Subtask>) -> Solution {
        Solution::new("Fold Chair", SceneConfiguration::default(), subs).unwrap()
    }

    #[test]
    fn subtask_verdicts() {
        let w = chair_world();
        let cat = ApiCatalog::default();
        assert!(!execute_subtask(&w, &grasp("link_1"), &cat));
        assert!(execute_subtask(&w, &grasp("link_0"), &cat));
        assert!(execute_subtask(&w, &lower("get_joint_limit(self, \"FoldingChair\", \"joint_0\")[0]"), &cat));
        assert!(!execute_subtask(&w, &lower("np.pi"), &cat));
        let bogus = Subtask::new("x", Supervision::new(Variant::Primitive, "success = fly_to_moon(self)"));
        assert!(!execute_subtask(&w, &bogus, &cat));
    }

    #[test]
    fn rule_vocabulary() {
        let cat = ApiCatalog::default();
        let mut w = chair_world();
        w.rules = vec![Rule::new(RuleKind::ForbidLiteral { literal: "link_0".into() })];
        assert!(!execute_subtask(&w, &grasp("link_0"), &cat));
        w.rules = vec![Rule::new(RuleKind::ForbidApi { name: "check_grasped".into() }).only(Variant::RewardFunction)];
        assert!(execute_subtask(&w, &grasp("link_0"), &cat));
        w.rules = vec![Rule::new(RuleKind::RequireApi { name: "release_grasp".into() })];
        assert!(!execute_subtask(&w, &grasp("link_0"), &cat));
        w.rules = vec![Rule::new(RuleKind::ForbidSubstring { text: "final_state".into() })];
        assert!(!execute_subtask(&w, &grasp("link_0"), &cat));
    }

    #[test]
    fn solution_modes() {
        let w = chair_world();
        let cat = ApiCatalog::default();
        let good = solution(vec![grasp("link_0"), lower("get_joint_limit(self, \"FoldingChair\", \"joint_0\")[0]")]);
        let out = execute_solution(&w, &good, &cat, ExecMode::RunAll).unwrap();
        assert_eq!(out.subtask_success, vec![true, true]);
        assert!(out.overall_success);

        let bad = solution(vec![grasp("link_1"), lower("np.pi")]);
        let out = execute_solution(&w, &bad, &cat, ExecMode::FailFast).unwrap();
        assert_eq!(out.steps_executed, 1);
        assert_eq!(out.subtask_success, vec![false, false]);
        assert!(!out.overall_success);

        // final subtask fails the goal: a grasp never references joint_0
        let only_grasp = solution(vec![grasp("link_0")]);
        let out = execute_solution(&w, &only_grasp, &cat, ExecMode::RunAll).unwrap();
        assert_eq!(out.subtask_success, vec![true]);
        assert!(!out.overall_success);
    }

    #[test]
    fn world_mismatch() {
        let w = chair_world();
        let mut sol = solution(vec![grasp("link_0")]);
        sol.scene = SceneConfiguration::parse("object: Sofa | 1 | 1.0 | 0,0,0").unwrap();
        assert!(matches!(
            execute_solution(&w, &sol, &ApiCatalog::default(), ExecMode::RunAll),
            Err(EnvError::WorldMismatch(o)) if o == "Sofa"
        ));
    }

    #[test]
    fn executor_caches_by_content() {
        let ex = Executor::new(chair_world(), ApiCatalog::default());
        let a = solution(vec![grasp("link_0"), lower("np.pi")]);
        let b = solution(vec![grasp("link_0"), lower("0.0")]);
        ex.execute_solution(&a, ExecMode::RunAll).unwrap();
        ex.execute_solution(&b, ExecMode::RunAll).unwrap();
        assert_eq!(ex.subtask_runs(), 3);
        assert_eq!(ex.solution_runs(), 2);
    }

    #[test]
    fn noise_is_seeded() {
        let mut w = chair_world();
        w.noise = Noise { epsilon: 1.0, seed: 3 };
        let cat = ApiCatalog::default();
        assert!(!execute_subtask(&w, &grasp("link_0"), &cat));
        w.noise.epsilon = 0.5;
        let first: Vec<bool> = (0..5).map(|_| execute_subtask(&w, &grasp("link_0"), &cat)).collect();
        assert!(first.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn fixture_goal_validation() {
        let mut w = chair_world();
        w.goal = Goal::FinalReferences { any_of: vec!["joint_9".into()] };
        assert!(w.validate().is_err());
    }
}
