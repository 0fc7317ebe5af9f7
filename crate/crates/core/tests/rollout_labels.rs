use std::collections::HashSet;

use gsa_core::golden::fold_chair;
use gsa_core::rollout::{emit_dataset, label_rewards, random_executed_tree, run_arlet_mcts, Insertion, NodeId, SolutionTree, TreeNode};
use gsa_core::scripted_env::Executor;
use gsa_core::trace::ApiCatalog;
use proptest::prelude::*;

/// Brute-force label: the label of prefix `m` belongs to whichever node first
/// produced it, the base for the inherited `m <= j` and the node itself
/// afterwards; it is 1 iff that node's subtask `m` and whole solution
/// succeeded.
fn oracle_label(tree: &SolutionTree, node: &TreeNode, m: usize) -> u8 {
    let owner = match node.parent {
        Some(p) if m <= node.origin.j => tree.node(p),
        _ => node,
    };
    if owner.failed.is_some() {
        return 0;
    }
    let o = owner.outcome.as_ref().unwrap();
    u8::from(o.subtask_success[m - 1] && o.overall_success)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn labels_match_the_brute_force_rule(seed in any::<u64>()) {
        let tree = random_executed_tree(seed);
        let rewards = label_rewards(&tree).unwrap();
        for node in tree.nodes() {
            for m in 1..=node.solution.len() {
                prop_assert_eq!(rewards.get(node.index, m), Some(oracle_label(&tree, node, m)), "node {:?} m {}", node.origin, m);
            }
        }
    }

    #[test]
    fn completions_never_repeat_an_earlier_node(seed in any::<u64>()) {
        // bases are independent samples and may coincide; completions are deduplicated
        let tree = random_executed_tree(seed);
        for (b, nb) in tree.nodes().iter().enumerate().filter(|(_, n)| n.parent.is_some()) {
            for na in &tree.nodes()[..b] {
                prop_assert!(!na.solution.same_content(&nb.solution));
            }
        }
        for d in tree.dedups() {
            let kept = tree.node(d.same_as);
            prop_assert!(kept.index.0 < tree.nodes().len());
        }
    }

    #[test]
    fn completions_share_the_base_prefix(seed in any::<u64>()) {
        let tree = random_executed_tree(seed);
        for node in tree.nodes() {
            if let Some(p) = node.parent {
                let base = tree.node(p);
                prop_assert!(base.origin.is_base());
                let j = node.origin.j;
                prop_assert_eq!(&node.solution.subtasks[..j], &base.solution.subtasks[..j]);
            }
        }
    }

    #[test]
    fn dataset_records_are_unique_and_consistent(seed in any::<u64>()) {
        let tree = random_executed_tree(seed);
        let rewards = label_rewards(&tree).unwrap();
        let data = emit_dataset(&tree, &rewards).unwrap();
        let mut seen = HashSet::new();
        for r in &data {
            prop_assert_eq!(r.m, r.subtasks.len());
            prop_assert_eq!(r.provenance[3], r.m);
            prop_assert!(r.subtasks.iter().all(|s| s.success_bit.is_none()));
            prop_assert!(seen.insert((serde_json::to_string(&r.subtasks).unwrap(), r.label)));
        }
    }
}

#[test]
fn fold_chair_tree_matches_the_appendix() {
    let mock = fold_chair::mock();
    let exec = Executor::new(fold_chair::world(), ApiCatalog::default());
    let (tree, rewards) =
        run_arlet_mcts(&mock, &mock, &exec, &fold_chair::task(), &fold_chair::prompt(), &fold_chair::rollout_config()).unwrap();
    let labels: Vec<&[u8]> = tree.nodes().iter().map(|n| rewards.node_rewards(n.index)).collect();
    assert_eq!(labels, vec![&[0, 0][..], &[1, 1][..], &[1, 0][..]]);
    assert_eq!(tree.dedups().len(), 1);
    assert_eq!(tree.dedups()[0].same_as, NodeId(1));
    // two bases and one completion, nothing run for the duplicate
    assert_eq!((exec.solution_runs(), exec.subtask_runs()), (3, 5));
    assert_eq!(mock.misses(), 0);
}

#[test]
fn duplicate_completion_is_recorded_not_added() {
    let task = fold_chair::task();
    let base = gsa_core::trace::parse_solution(&task.name, fold_chair::ROLLOUT_2).unwrap();
    let mut tree = SolutionTree::new(task);
    tree.add_base(1, base.clone()).unwrap();
    match tree.add_completion(1, 2, 1, base).unwrap() {
        Insertion::Duplicate(id) => assert_eq!(id, NodeId(0)),
        other => panic!("expected a duplicate, got {other:?}"),
    }
    assert_eq!(tree.nodes().len(), 1);
}
