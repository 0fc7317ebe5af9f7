//! Train/test splits of labeled prefixes, by task or by solution.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::digest::sha256_bytes;
use crate::rollout::{LabeledPrefix, Origin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ByTask,
    BySolution,
}

impl SplitMode {
    pub const ALL: [SplitMode; 2] = [SplitMode::ByTask, SplitMode::BySolution];

    /// Short name used on the command line and in file names.
    pub fn short(self) -> &'static str {
        match self {
            SplitMode::ByTask => "task",
            SplitMode::BySolution => "solution",
        }
    }

    pub fn from_short(s: &str) -> Option<Self> {
        SplitMode::ALL.into_iter().find(|m| m.short() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub test_fraction: f64,
    pub seed: u64,
}

/// `round(fraction * n)` clamped so both sides keep at least one item.
fn test_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

fn seeded_rng(seed: u64, salt: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(sha256_bytes(&[&seed.to_le_bytes(), salt.as_bytes()]))
}

/// Splits records without losing or duplicating any. By task, whole tasks
/// go to one side. By solution, each task's solutions (records grouped by
/// the `(i, j, k)` they were emitted from) are split separately; a task with
/// a single solution stays in train.
pub fn split_dataset(
    records: &[LabeledPrefix],
    spec: &SplitSpec,
) -> Result<(Vec<LabeledPrefix>, Vec<LabeledPrefix>), HarnessError> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(HarnessError::InvalidFraction(spec.test_fraction));
    }
    let tasks: BTreeSet<&str> = records.iter().map(|r| r.task_name.as_str()).collect();
    let in_test: Box<dyn Fn(&LabeledPrefix) -> bool> = match spec.mode {
        SplitMode::ByTask => {
            if tasks.len() < 2 {
                return Err(HarnessError::TooFewTasks(tasks.len()));
            }
            let mut names: Vec<&str> = tasks.iter().copied().collect();
            names.shuffle(&mut seeded_rng(spec.seed, "by_task"));
            let test: BTreeSet<String> =
                names[..test_count(names.len(), spec.test_fraction)].iter().map(|s| s.to_string()).collect();
            Box::new(move |r| test.contains(&r.task_name))
        }
        SplitMode::BySolution => {
            let mut groups: BTreeMap<&str, BTreeSet<Origin>> = BTreeMap::new();
            for r in records {
                groups.entry(&r.task_name).or_default().insert(r.solution_origin());
            }
            let mut test: BTreeSet<(String, Origin)> = BTreeSet::new();
            for (task, origins) in groups {
                if origins.len() < 2 {
                    continue;
                }
                let mut origins: Vec<Origin> = origins.into_iter().collect();
                origins.shuffle(&mut seeded_rng(spec.seed, task));
                let n = test_count(origins.len(), spec.test_fraction);
                test.extend(origins[..n].iter().map(|o| (task.to_string(), *o)));
            }
            Box::new(move |r| test.contains(&(r.task_name.clone(), r.solution_origin())))
        }
    };
    let (test, train): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| in_test(r));
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::SceneConfiguration;

    fn rec(task: &str, i: usize, m: usize) -> LabeledPrefix {
        LabeledPrefix {
            task_name: task.to_string(),
            m,
            scene: SceneConfiguration::default(),
            subtasks: Vec::new(),
            label: (m % 2) as u8,
            provenance: [i, 0, 0, m],
        }
    }

    #[test]
    fn by_task_cardinality() {
        let records: Vec<_> = (0..10).flat_map(|t| (1..=3).map(move |m| rec(&format!("t{t}"), 1, m))).collect();
        let spec = SplitSpec { mode: SplitMode::ByTask, test_fraction: 0.3, seed: 4 };
        let (train, test) = split_dataset(&records, &spec).unwrap();
        let test_tasks: BTreeSet<_> = test.iter().map(|r| r.task_name.clone()).collect();
        let train_tasks: BTreeSet<_> = train.iter().map(|r| r.task_name.clone()).collect();
        assert_eq!(test_tasks.len(), 3);
        assert!(test_tasks.is_disjoint(&train_tasks));
        assert_eq!(train.len() + test.len(), records.len());
        assert_eq!(split_dataset(&records, &spec).unwrap(), (train, test));
    }

    #[test]
    fn by_solution_cardinality() {
        let records: Vec<_> = (1..=5).flat_map(|i| (1..=2).map(move |m| rec("t", i, m))).collect();
        let spec = SplitSpec { mode: SplitMode::BySolution, test_fraction: 0.4, seed: 1 };
        let (train, test) = split_dataset(&records, &spec).unwrap();
        let origins = |v: &[LabeledPrefix]| v.iter().map(|r| r.solution_origin()).collect::<BTreeSet<_>>();
        assert_eq!(origins(&test).len(), 2);
        assert_eq!(origins(&train).len(), 3);
        assert!(origins(&test).is_disjoint(&origins(&train)));
    }

    #[test]
    fn errors() {
        let one = vec![rec("t", 1, 1), rec("t", 2, 1)];
        let spec = SplitSpec { mode: SplitMode::ByTask, test_fraction: 0.3, seed: 0 };
        assert!(matches!(split_dataset(&one, &spec), Err(HarnessError::TooFewTasks(1))));
        let bad = SplitSpec { test_fraction: 1.0, ..spec };
        assert!(matches!(split_dataset(&one, &bad), Err(HarnessError::InvalidFraction(_))));
    }

    #[test]
    fn single_solution_task_stays_in_train() {
        let records = vec![rec("a", 1, 1), rec("a", 1, 2)];
        let spec = SplitSpec { mode: SplitMode::BySolution, test_fraction: 0.5, seed: 0 };
        let (train, test) = split_dataset(&records, &spec).unwrap();
        assert_eq!((train.len(), test.len()), (2, 0));
    }
}
