//! Seeded synthetic tasks, candidate solutions with controlled flaws, and an
//! offline policy model that writes them.
//!
//! A clean candidate grasps a relevant link and then drives a relevant joint
//! to its limit; in the world built by [`ScriptedWorld::for_task`] it
//! succeeds. Each [`Flaw`] breaks exactly one subtask so the solution fails.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::sha256_bytes;
use crate::model_io::{ModelClient, ModelError, PromptBundle};
use crate::trace::{
    ArticulationTree, Joint, SceneConfiguration, Solution, Subtask, Supervision, TaskSpec, Variant,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flaw {
    /// Grasps a link the object does not have.
    WrongLink,
    /// Calls an API outside the catalog.
    DisallowedApi,
    /// The final subtask never assigns `success`.
    MissingSuccess,
    /// Compares the joint state against a hard-coded angle.
    MagicTarget,
    /// A `reward_*` component never reaches the combined reward.
    UnusedRewardComponent,
}

impl Flaw {
    pub const ALL: [Flaw; 5] =
        [Flaw::WrongLink, Flaw::DisallowedApi, Flaw::MissingSuccess, Flaw::MagicTarget, Flaw::UnusedRewardComponent];
}

fn object_of(task: &TaskSpec) -> &str {
    if task.object.is_empty() {
        &task.name
    } else {
        &task.object
    }
}

fn target_link(task: &TaskSpec) -> String {
    task.relevant_links
        .first()
        .or_else(|| task.articulation_tree.links.iter().find(|l| *l != "base"))
        .cloned()
        .unwrap_or_else(|| "link_0".to_string())
}

fn target_joint(task: &TaskSpec) -> String {
    task.relevant_joints
        .first()
        .or_else(|| task.articulation_tree.joints.first().map(|j| &j.name))
        .cloned()
        .unwrap_or_else(|| "joint_0".to_string())
}

pub fn scene_for(task: &TaskSpec) -> SceneConfiguration {
    let raw = format!("embodiment: franka\nobject: {} | {} | 1.0 | 0.0, 0.0, 0.0", object_of(task), asset_id(task));
    SceneConfiguration::parse(&raw).expect("generated scene parses")
}

fn asset_id(task: &TaskSpec) -> u64 {
    u64::from_le_bytes(sha256_bytes(&[task.name.as_bytes()])[..8].try_into().expect("8 bytes")) % 100_000
}

fn grasp(obj: &str, link: &str, api: &str) -> Subtask {
    let code = format!(
        "rgbs, final_state = {api}(self, \"{obj}\", \"{link}\")\nsuccess = check_grasped(self, \"{obj}\", \"{link}\")"
    );
    Subtask::new(format!("grasp the {link} of the {}", obj.to_lowercase()), Supervision::new(Variant::Primitive, code))
}

/// Reward driving `joint` towards `fraction` of its range.
fn actuate(obj: &str, link: &str, joint: &str, fraction: f64, flaw: Option<Flaw>) -> Subtask {
    let target = match flaw {
        Some(Flaw::MagicTarget) => "    target_angle = np.pi / 2  # assumed range".to_string(),
        _ => format!("    target_angle = joint_limit_low + {fraction} * (joint_limit_high - joint_limit_low)"),
    };
    let combined = match flaw {
        Some(Flaw::UnusedRewardComponent) => "    reward = 5 * reward_joint",
        _ => "    reward = reward_near + 5 * reward_joint",
    };
    let success = match flaw {
        Some(Flaw::MissingSuccess) => "    done = diff < 0.1 * (joint_limit_high - joint_limit_low)\n    return reward, done",
        _ => "    success = diff < 0.1 * (joint_limit_high - joint_limit_low)\n    return reward, success",
    };
    let code = format!(
        "def _compute_reward(self):\n    eef_pos = get_eef_pos(self)[0]\n    link_pos = get_link_state(self, \"{obj}\", \"{link}\")\n    \
reward_near = -np.linalg.norm(eef_pos - link_pos)\n    joint_angle = get_joint_state(self, \"{obj}\", \"{joint}\")\n    \
joint_limit_low, joint_limit_high = get_joint_limit(self, \"{obj}\", \"{joint}\")\n{target}\n    \
diff = np.abs(joint_angle - target_angle)\n    reward_joint = -diff\n{combined}\n{success}"
    );
    let verb = if fraction >= 1.0 { "fully" } else { "partially" };
    Subtask::new(format!("move the {joint} {verb} along its range"), Supervision::new(Variant::RewardFunction, code))
}

/// Candidate solution for `task` with `len` (2 or 3) subtasks and at most one flaw.
pub fn candidate(task: &TaskSpec, len: usize, flaw: Option<Flaw>) -> Solution {
    let obj = object_of(task);
    let link = target_link(task);
    let joint = target_joint(task);
    let mut subs = vec![match flaw {
        Some(Flaw::WrongLink) => grasp(obj, "link_99", "grasp_object_link"),
        Some(Flaw::DisallowedApi) => grasp(obj, &link, "pull_object_link"),
        _ => grasp(obj, &link, "grasp_object_link"),
    }];
    if len >= 3 {
        subs.push(actuate(obj, &link, &joint, 0.5, None));
    }
    let last_flaw = flaw.filter(|f| matches!(f, Flaw::MissingSuccess | Flaw::MagicTarget | Flaw::UnusedRewardComponent));
    subs.push(actuate(obj, &link, &joint, 1.0, last_flaw));
    Solution::new(task.name.clone(), scene_for(task), subs).expect("nonempty")
}

const OBJECTS: &[(&str, &str)] = &[
    ("Door", "open"),
    ("Drawer", "pull out"),
    ("Laptop", "open"),
    ("Box", "close"),
    ("Faucet", "turn on"),
    ("Window", "slide open"),
    ("Oven", "open"),
    ("Refrigerator", "close"),
    ("Toilet", "lift the lid of"),
    ("Dishwasher", "open"),
    ("Lamp", "rotate"),
    ("Kettle", "open the lid of"),
];

/// The `i`-th synthetic task of a seeded family.
pub fn synthetic_task(seed: u64, i: usize) -> TaskSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let (obj, verb) = OBJECTS[rng.gen_range(0..OBJECTS.len())];
    let n_links = rng.gen_range(2..=4);
    let links: Vec<String> = std::iter::once("base".to_string()).chain((0..n_links).map(|k| format!("link_{k}"))).collect();
    let joints: Vec<Joint> = (0..n_links)
        .map(|k| Joint {
            name: format!("joint_{k}"),
            joint_type: if rng.gen_bool(0.5) { "revolute" } else { "prismatic" }.to_string(),
            parent: "base".to_string(),
            child: format!("link_{k}"),
        })
        .collect();
    let k = rng.gen_range(0..n_links);
    let mut task = TaskSpec::named(format!("{} {obj} {i}", capitalize(verb)), format!("The robot arm needs to {verb} the {}.", obj.to_lowercase()));
    task.object = obj.to_string();
    task.articulation_tree = ArticulationTree { links, joints };
    task.link_semantics = BTreeMap::from([(format!("link_{k}"), "handle".to_string())]);
    task.relevant_links = vec![format!("link_{k}")];
    task.relevant_joints = vec![format!("joint_{k}")];
    task.initial_config = "closed".to_string();
    task
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteTask {
    pub task: TaskSpec,
    pub candidates: Vec<Solution>,
    /// Index of the clean candidate.
    pub good: usize,
}

/// `n_tasks` tasks with `n_candidates` candidates each, exactly one clean.
pub fn synthetic_suite(seed: u64, n_tasks: usize, n_candidates: usize) -> Vec<SuiteTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_tasks)
        .map(|i| {
            let task = synthetic_task(seed, i);
            let good = rng.gen_range(0..n_candidates.max(1));
            let candidates = (0..n_candidates)
                .map(|c| {
                    let len = rng.gen_range(2..=3);
                    let flaw = (c != good).then(|| *Flaw::ALL.choose(&mut rng).expect("nonempty"));
                    candidate(&task, len, flaw)
                })
                .collect();
            SuiteTask { task, candidates, good }
        })
        .collect()
}

/// Reconstructs the task from the specification section of a rendered prompt.
pub fn task_from_prompt(user: &str) -> Option<TaskSpec> {
    let section = user.split("## Task specification").nth(1)?;
    let mut task = TaskSpec::named("", "");
    let list = |v: &str| -> Vec<String> { v.split(", ").filter(|s| !s.is_empty()).map(str::to_string).collect() };
    for line in section.lines().take_while(|l| !l.starts_with("## ")) {
        let Some((key, value)) = line.split_once(": ") else { continue };
        let value = value.trim();
        match key {
            "name" => task.name = value.to_string(),
            "description" => task.description = value.to_string(),
            "object" => task.object = value.to_string(),
            "links" => task.articulation_tree.links = list(value),
            "joints" => {
                task.articulation_tree.joints = value
                    .split(')')
                    .filter_map(|j| j.trim_start_matches([',', ' ']).split(' ').next().filter(|n| !n.is_empty()))
                    .map(|name| {
                        let name = name.to_string();
                        Joint { name, joint_type: String::new(), parent: String::new(), child: String::new() }
                    })
                    .collect()
            }
            "relevant links" => task.relevant_links = list(value),
            "relevant joints" => task.relevant_joints = list(value),
            _ => {}
        }
    }
    (!task.name.is_empty()).then_some(task)
}

/// Offline policy and completer. Each reply is a clean candidate or, with
/// probability `flaw_rate`, a candidate with one random flaw. Replies depend
/// on the seed, the prompt and how many times that prompt was seen.
pub struct SyntheticPolicy {
    seed: u64,
    flaw_rate: f64,
    calls: AtomicU64,
}

impl SyntheticPolicy {
    pub fn new(seed: u64, flaw_rate: f64) -> Self {
        SyntheticPolicy { seed, flaw_rate: flaw_rate.clamp(0.0, 1.0), calls: AtomicU64::new(0) }
    }

    fn rng_for(&self, bundle: &PromptBundle) -> ChaCha8Rng {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        ChaCha8Rng::from_seed(sha256_bytes(&[&self.seed.to_le_bytes(), &n.to_le_bytes(), bundle.hash().as_bytes()]))
    }
}

impl ModelClient for SyntheticPolicy {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, ModelError> {
        let task = task_from_prompt(&bundle.user)
            .ok_or_else(|| ModelError::BadResponse("prompt has no task specification".into()))?;
        let mut rng = self.rng_for(bundle);
        let flaw = rng.gen_bool(self.flaw_rate).then(|| *Flaw::ALL.choose(&mut rng).expect("nonempty"));
        let len = rng.gen_range(2..=3);
        let sol = candidate(&task, len, flaw);
        let resume = bundle
            .user
            .rsplit_once("Continue the solution from subtask ")
            .and_then(|(_, rest)| rest.split(|c: char| !c.is_ascii_digit()).next()?.parse::<usize>().ok());
        Ok(match resume {
            None => sol.render(),
            Some(from) => sol
                .subtasks
                .iter()
                .enumerate()
                .skip(from.saturating_sub(1))
                .map(|(i, s)| s.render(i + 1))
                .collect::<Vec<_>>()
                .join("\n\n"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::{build_completion_prompt, build_prompt, ExemplarMode, DEFAULT_INSTRUCTIONS};
    use crate::scripted_env::{ExecMode, Executor, ScriptedWorld};
    use crate::trace::{parse_solution, parse_subtasks, ApiCatalog};

    #[test]
    fn clean_candidates_succeed_and_flaws_fail() {
        for i in 0..20 {
            let task = synthetic_task(7, i);
            let exec = Executor::new(ScriptedWorld::for_task(&task), ApiCatalog::default());
            for len in [2, 3] {
                let out = exec.execute_solution(&candidate(&task, len, None), ExecMode::RunAll).unwrap();
                assert!(out.overall_success, "{}", task.name);
                for flaw in Flaw::ALL {
                    let out = exec.execute_solution(&candidate(&task, len, Some(flaw)), ExecMode::RunAll).unwrap();
                    assert!(!out.overall_success, "{flaw:?}");
                    assert_eq!(out.subtask_success.iter().filter(|b| !**b).count(), 1, "{flaw:?}");
                }
            }
        }
    }

    #[test]
    fn suite_has_one_clean_candidate_per_task() {
        let suite = synthetic_suite(3, 10, 3);
        assert_eq!(suite.len(), 10);
        for t in &suite {
            let exec = Executor::new(ScriptedWorld::for_task(&t.task), ApiCatalog::default());
            let wins: Vec<usize> = (0..3)
                .filter(|&c| exec.execute_solution(&t.candidates[c], ExecMode::RunAll).unwrap().overall_success)
                .collect();
            assert_eq!(wins, vec![t.good]);
        }
        assert_eq!(suite, synthetic_suite(3, 10, 3));
    }

    #[test]
    fn policy_reads_the_prompt_and_completes() {
        let task = synthetic_task(1, 0);
        let bundle = build_prompt(&task, &[], &ApiCatalog::default(), DEFAULT_INSTRUCTIONS, ExemplarMode::Pool);
        let parsed = task_from_prompt(&bundle.user).unwrap();
        assert_eq!(parsed.name, task.name);
        assert_eq!(parsed.relevant_joints, task.relevant_joints);
        assert_eq!(parsed.articulation_tree.joints.len(), task.articulation_tree.joints.len());

        let policy = SyntheticPolicy::new(5, 0.0);
        let sol = parse_solution(&task.name, &policy.generate(&bundle).unwrap()).unwrap();
        assert_eq!(sol.subtasks[0], candidate(&task, 2, None).subtasks[0]);
        let completion = build_completion_prompt(&bundle, &sol, 1);
        let rest = parse_subtasks(&policy.generate(&completion).unwrap()).unwrap();
        assert!(!rest.is_empty() && rest.len() <= 2);
        let from_last = build_completion_prompt(&bundle, &sol, sol.len());
        assert!(parse_subtasks(&policy.generate(&from_last).unwrap()).unwrap().len() <= 1);
    }
}
