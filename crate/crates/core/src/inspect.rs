//! Static inspection of supervision code.
//!
//! Everything here is lexical and line-based; the embedded code is never
//! executed. The scripted world and the verifier featurizer both read the
//! same [`Inspection`].

use std::collections::BTreeSet;

use crate::trace::{
    identifiers, logical_lines, parse_assignment, scan_calls, ApiCatalog, Supervision, Variant,
};

/// An object (and optionally a link or joint) named in a catalog API call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reference {
    pub api: String,
    pub object: String,
    pub part: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inspection {
    /// Some statement assigns `success`.
    pub has_success: bool,
    /// Some statement assigns the result of a primitive API call.
    pub has_execution_result: bool,
    /// A combined `reward` is assigned and returned together with `success`.
    pub returns_reward: bool,
    /// `reward_*` components that never reach the combined reward.
    pub unused_components: Vec<String>,
    /// Variables holding numeric constants compared against a joint state.
    pub magic_targets: Vec<String>,
    pub references: Vec<Reference>,
}

impl Inspection {
    pub fn structurally_sound(&self, variant: Variant) -> bool {
        match variant {
            Variant::Primitive => self.has_success && self.has_execution_result,
            Variant::RewardFunction => {
                self.has_success && self.returns_reward && self.unused_components.is_empty()
            }
        }
    }
}

pub fn inspect(sup: &Supervision, catalog: &ApiCatalog) -> Inspection {
    let lines = logical_lines(&sup.code);
    let mut out = Inspection::default();
    let mut joint_vars: BTreeSet<String> = BTreeSet::new();
    let mut numeric_vars: BTreeSet<String> = BTreeSet::new();
    let mut components: Vec<String> = Vec::new();
    let mut combined: Option<String> = None;

    for line in &lines {
        if let Some(a) = parse_assignment(line) {
            let calls = scan_calls(&a.rhs);
            if a.targets.iter().any(|t| t == "success") {
                out.has_success = true;
            }
            if calls.iter().any(|c| !c.attribute && catalog.primitive_apis.contains(&c.name)) {
                out.has_execution_result = true;
            }
            if calls.iter().any(|c| c.name == "get_joint_state") {
                joint_vars.extend(a.targets.iter().cloned());
            }
            if is_numeric_constant(&a.rhs) {
                numeric_vars.extend(a.targets.iter().cloned());
            }
            for t in &a.targets {
                if t == "reward" {
                    combined = Some(a.rhs.clone());
                } else if t.starts_with("reward_") && !components.contains(t) {
                    components.push(t.clone());
                }
            }
        }
        if let Some(ret) = line.trim_start().strip_prefix("return") {
            let ids = identifiers(ret);
            if ids.iter().any(|i| i == "reward") && ids.iter().any(|i| i == "success") {
                out.returns_reward = true;
            }
        }
    }
    match &combined {
        Some(rhs) => {
            let ids: BTreeSet<String> = identifiers(rhs).into_iter().collect();
            out.unused_components = components.into_iter().filter(|c| !ids.contains(c)).collect();
        }
        None => {
            out.returns_reward = false;
            out.unused_components = components;
        }
    }

    for line in &lines {
        let ids = identifiers(line);
        if ids.iter().any(|i| joint_vars.contains(i)) {
            for id in ids.iter().filter(|i| numeric_vars.contains(*i)) {
                if !out.magic_targets.contains(id) {
                    out.magic_targets.push(id.clone());
                }
            }
        }
    }

    out.references = scan_calls(&sup.code)
        .into_iter()
        .filter(|c| !c.attribute && !c.definition && catalog.contains(&c.name))
        .filter_map(|c| {
            let mut args = c.string_args.into_iter();
            let object = args.next()?;
            Some(Reference { api: c.name, object, part: args.next() })
        })
        .collect();
    out
}

/// Right-hand sides made only of numeric literals, pi constants and
/// arithmetic, e.g. `np.pi`, `3.14 / 2`, `-0.5`.
pub fn is_numeric_constant(rhs: &str) -> bool {
    let replaced = rhs.replace("np.pi", "1").replace("math.pi", "1");
    let replaced: String = identifiers(&replaced)
        .iter()
        .fold(replaced.clone(), |acc, id| if id == "pi" { acc.replace("pi", "1") } else { acc });
    let rest = replaced.trim();
    !rest.is_empty()
        && rest.chars().any(|c| c.is_ascii_digit())
        && rest.chars().all(|c| c.is_ascii_digit() || " .eE+-*/()".contains(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_supervision;

    fn sup(variant: Variant, code: &str) -> Supervision {
        Supervision::new(variant, code)
    }

    #[test]
    fn primitive_structure() {
        let cat = ApiCatalog::default();
        let good = sup(
            Variant::Primitive,
            "rgbs, final_state = grasp_object_link(self, \"Chair\", \"link_0\")\nsuccess = check_grasped(self, \"Chair\", \"link_0\")",
        );
        let i = inspect(&good, &cat);
        assert!(i.structurally_sound(Variant::Primitive));
        assert_eq!(i.references.len(), 2);
        assert_eq!(i.references[0].part.as_deref(), Some("link_0"));

        let no_success = sup(Variant::Primitive, "rgbs, final_state = release_grasp(self)");
        assert!(!inspect(&no_success, &cat).structurally_sound(Variant::Primitive));
    }

    #[test]
    fn reward_components() {
        let cat = ApiCatalog::default();
        let code = "def _compute_reward(self):\n    reward_near = -1\n    reward_joint = -2\n    reward = reward_near\n    success = True\n    return reward, success";
        let i = inspect(&sup(Variant::RewardFunction, code), &cat);
        assert_eq!(i.unused_components, vec!["reward_joint"]);
        assert!(!i.structurally_sound(Variant::RewardFunction));

        let fixed = code.replace("reward = reward_near", "reward = reward_near + 5 * reward_joint");
        assert!(inspect(&sup(Variant::RewardFunction, &fixed), &cat).structurally_sound(Variant::RewardFunction));
    }

    #[test]
    fn magic_target_detected() {
        let cat = ApiCatalog::default();
        let raw = "```reward\ndef _compute_reward(self):\n    joint_angle = get_joint_state(self, \"FoldingChair\", \"joint_0\")\n    folded_angle = np.pi  # assume\n    diff = np.abs(joint_angle - folded_angle)\n    reward = -diff\n    success = diff < 0.1\n    return reward, success\n```";
        let i = inspect(&parse_supervision(raw).unwrap(), &cat);
        assert_eq!(i.magic_targets, vec!["folded_angle"]);

        let limit = raw.replace("np.pi  # assume", "get_joint_limit(self, \"FoldingChair\", \"joint_0\")[0]");
        assert!(inspect(&parse_supervision(&limit).unwrap(), &cat).magic_targets.is_empty());
    }

    #[test]
    fn numeric_constants() {
        assert!(is_numeric_constant("np.pi"));
        assert!(is_numeric_constant("-0.5 * math.pi"));
        assert!(is_numeric_constant("1e-3"));
        assert!(!is_numeric_constant("get_joint_limit(self, 'a', 'b')[0]"));
        assert!(!is_numeric_constant("x + 1"));
        assert!(!is_numeric_constant(""));
    }
}
