//! Tasks, scene configurations, subtask supervisions and solutions.
//!
//! Raw model output is parsed here into typed supervisions. A supervision is
//! one fenced code block whose opening fence names the variant:
//!
//! ````text
//! subtask 1: grasp the seat
//! ```primitive
//! rgbs, final_state = grasp_object_link(self, "FoldingChair", "link_0")
//! success = check_grasped(self, "FoldingChair", "link_0")
//! ```
//! ````
//!
//! Call extraction is lexical: an identifier immediately followed by `(` is a
//! call. Attribute calls (`np.abs(`), definitions (`def f(`) and keywords are
//! not API calls.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("no fenced code block found")]
    NoCodeBlock,
    #[error("unknown fence tag `{0}` (expected `primitive` or `reward`)")]
    UnknownTag(String),
    #[error("expected exactly one fenced block, found {0}")]
    MultipleBlocks(usize),
    #[error("prefix length {m} out of range 1..={len}")]
    OutOfRange { m: usize, len: usize },
    #[error("duplicate scene object `{0}`")]
    DuplicateObject(String),
    #[error("malformed scene line `{0}`")]
    MalformedScene(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("solution has no subtasks")]
    EmptySolution,
}

// ---------------------------------------------------------------------------
// Task specification

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    #[serde(rename = "type")]
    pub joint_type: String,
    pub parent: String,
    pub child: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticulationTree {
    pub links: Vec<String>,
    pub joints: Vec<Joint>,
}

impl ArticulationTree {
    pub fn has_link(&self, name: &str) -> bool {
        self.links.iter().any(|l| l == name)
    }

    pub fn has_joint(&self, name: &str) -> bool {
        self.joints.iter().any(|j| j.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub description: String,
    /// Name of the articulated object the task manipulates.
    #[serde(default)]
    pub object: String,
    #[serde(default)]
    pub articulation_tree: ArticulationTree,
    #[serde(default)]
    pub link_semantics: BTreeMap<String, String>,
    #[serde(default)]
    pub relevant_links: Vec<String>,
    #[serde(default)]
    pub relevant_joints: Vec<String>,
    #[serde(default)]
    pub initial_config: String,
}

impl TaskSpec {
    /// A task with only a name and description (no articulation data).
    pub fn named(name: impl Into<String>, description: impl Into<String>) -> Self {
        TaskSpec {
            name: name.into(),
            description: description.into(),
            object: String::new(),
            articulation_tree: ArticulationTree::default(),
            link_semantics: BTreeMap::new(),
            relevant_links: Vec::new(),
            relevant_joints: Vec::new(),
            initial_config: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.name.trim().is_empty() {
            return Err(TraceError::InvalidTask("empty task name".into()));
        }
        let tree = &self.articulation_tree;
        for joint in &tree.joints {
            for end in [&joint.parent, &joint.child] {
                if !tree.has_link(end) {
                    return Err(TraceError::InvalidTask(format!(
                        "joint `{}` references unknown link `{end}`",
                        joint.name
                    )));
                }
            }
        }
        if let Some(l) = self.relevant_links.iter().find(|l| !tree.has_link(l)) {
            return Err(TraceError::InvalidTask(format!("relevant link `{l}` not in tree")));
        }
        if let Some(j) = self.relevant_joints.iter().find(|j| !tree.has_joint(j)) {
            return Err(TraceError::InvalidTask(format!("relevant joint `{j}` not in tree")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scene configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub asset_id: String,
    pub scale: f64,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneConfiguration {
    pub objects: Vec<SceneObject>,
    pub embodiment: String,
    pub raw_text: String,
}

impl SceneConfiguration {
    /// Parses the scene preamble of a generated solution. Scene text is kept
    /// opaque apart from `object:` and `embodiment:` lines:
    ///
    /// ```text
    /// object: FoldingChair | 100520 | 1.0 | 0.0, 0.0, 0.0
    /// embodiment: franka
    /// ```
    pub fn parse(raw: &str) -> Result<Self, TraceError> {
        let mut objects: Vec<SceneObject> = Vec::new();
        let mut embodiment = String::new();
        for line in raw.lines() {
            let line = line.trim();
            if let Some(rest) = strip_key(line, "object:") {
                let fields: Vec<&str> = rest.split('|').map(str::trim).collect();
                if fields.is_empty() || fields[0].is_empty() {
                    return Err(TraceError::MalformedScene(line.to_string()));
                }
                let scale = match fields.get(2) {
                    Some(s) => s.parse().map_err(|_| TraceError::MalformedScene(line.to_string()))?,
                    None => 1.0,
                };
                let mut position = [0.0; 3];
                if let Some(p) = fields.get(3) {
                    let parts: Vec<&str> = p.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(TraceError::MalformedScene(line.to_string()));
                    }
                    for (slot, part) in position.iter_mut().zip(parts) {
                        *slot = part
                            .parse()
                            .map_err(|_| TraceError::MalformedScene(line.to_string()))?;
                    }
                }
                objects.push(SceneObject {
                    name: fields[0].to_string(),
                    asset_id: fields.get(1).map(|s| s.to_string()).unwrap_or_default(),
                    scale,
                    position,
                });
            } else if let Some(rest) = strip_key(line, "embodiment:") {
                embodiment = rest.trim().to_string();
            }
        }
        let scene = SceneConfiguration {
            objects,
            embodiment,
            raw_text: raw.trim().to_string(),
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.name.as_str()) {
                return Err(TraceError::DuplicateObject(o.name.clone()));
            }
        }
        Ok(())
    }
}

fn strip_key<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    if line.len() >= key.len() && line[..key.len()].eq_ignore_ascii_case(key) {
        Some(&line[key.len()..])
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Supervisions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "primitive")]
    Primitive,
    #[serde(rename = "reward")]
    RewardFunction,
}

impl Variant {
    pub fn fence_tag(self) -> &'static str {
        match self {
            Variant::Primitive => "primitive",
            Variant::RewardFunction => "reward",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "primitive" => Some(Variant::Primitive),
            "reward" => Some(Variant::RewardFunction),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.fence_tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Supervision {
    pub variant: Variant,
    pub code: String,
    /// Free function calls in first-appearance order, deduplicated.
    pub api_calls: Vec<String>,
}

impl Supervision {
    pub fn new(variant: Variant, code: impl Into<String>) -> Self {
        let code = code.into();
        let api_calls = extract_api_calls(&code);
        Supervision { variant, code, api_calls }
    }

    /// Renders the supervision as a single fenced block.
    pub fn render(&self) -> String {
        format!("```{}\n{}\n```", self.variant.fence_tag(), self.code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "SubtaskRepr", into = "SubtaskRepr")]
pub struct Subtask {
    pub name: String,
    pub supervision: Supervision,
    pub success_bit: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct SubtaskRepr {
    name: String,
    variant: Variant,
    code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success_bit: Option<bool>,
}

impl From<SubtaskRepr> for Subtask {
    fn from(r: SubtaskRepr) -> Self {
        Subtask {
            name: r.name,
            supervision: Supervision::new(r.variant, r.code),
            success_bit: r.success_bit,
        }
    }
}

impl From<Subtask> for SubtaskRepr {
    fn from(s: Subtask) -> Self {
        SubtaskRepr {
            name: s.name,
            variant: s.supervision.variant,
            code: s.supervision.code,
            success_bit: s.success_bit,
        }
    }
}

impl Subtask {
    pub fn new(name: impl Into<String>, supervision: Supervision) -> Self {
        Subtask { name: name.into(), supervision, success_bit: None }
    }

    /// Identity of a subtask for dedup: name, variant and code.
    pub fn same_content(&self, other: &Subtask) -> bool {
        self.name == other.name
            && self.supervision.variant == other.supervision.variant
            && self.supervision.code == other.supervision.code
    }

    pub fn render(&self, index: usize) -> String {
        format!("subtask {}: {}\n{}", index, self.name, self.supervision.render())
    }
}

/// Parses raw text holding exactly one fenced supervision block.
pub fn parse_supervision(raw: &str) -> Result<Supervision, TraceError> {
    parse_block(raw).map(|(sup, _)| sup)
}

/// Parses one subtask. When `name` is `None` the prose outside the block
/// (minus a leading `subtask N:` marker) becomes the name.
pub fn parse_subtask(raw: &str, name: Option<&str>) -> Result<Subtask, TraceError> {
    let (supervision, prose) = parse_block(raw)?;
    let name = match name {
        Some(n) => n.to_string(),
        None => {
            let first = prose.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
            match split_subtask_header(first) {
                Some(rest) => rest.to_string(),
                None => first.to_string(),
            }
        }
    };
    let name = if name.is_empty() { "unnamed subtask".to_string() } else { name };
    Ok(Subtask::new(name, supervision))
}

fn parse_block(raw: &str) -> Result<(Supervision, String), TraceError> {
    let mut blocks: Vec<(String, Vec<&str>)> = Vec::new();
    let mut prose = String::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in raw.lines() {
        let trimmed = line.trim();
        match open.as_mut() {
            Some(_) if trimmed == "```" => {
                blocks.push(open.take().expect("open block"));
            }
            Some((_, lines)) => lines.push(line.trim_end_matches('\r')),
            None => {
                if let Some(rest) = trimmed.strip_prefix("```") {
                    let tag = rest.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
                    open = Some((tag, Vec::new()));
                } else {
                    prose.push_str(line);
                    prose.push('\n');
                }
            }
        }
    }
    match blocks.len() {
        0 => Err(TraceError::NoCodeBlock),
        1 => {
            let (tag, lines) = blocks.pop().expect("one block");
            let variant = Variant::from_tag(&tag).ok_or(TraceError::UnknownTag(tag))?;
            Ok((Supervision::new(variant, lines.join("\n")), prose))
        }
        n => Err(TraceError::MultipleBlocks(n)),
    }
}

/// `"subtask 2: lower the seat"` → `Some("lower the seat")`. Accepts
/// `subtask 2-1:` numbering as well.
pub fn split_subtask_header(line: &str) -> Option<&str> {
    let line = line.trim();
    let rest = strip_key(line, "subtask")?;
    let rest = rest.trim_start();
    let digits = rest
        .char_indices()
        .take_while(|(_, c)| c.is_ascii_digit() || *c == '-')
        .last()
        .map(|(i, c)| i + c.len_utf8())?;
    if !rest[..digits].starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let rest = rest[digits..].trim_start().strip_prefix(':')?;
    Some(rest.trim())
}

// ---------------------------------------------------------------------------
// Lexical scanning of supervision code

const KEYWORDS: &[&str] = &[
    "and", "as", "assert", "def", "del", "elif", "else", "except", "for", "from", "if", "import",
    "in", "is", "lambda", "not", "or", "print", "return", "while", "with", "yield", "class",
];

/// One call site found by the lexical scanner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub name: String,
    /// Called as `obj.name(...)`.
    pub attribute: bool,
    /// Preceded by `def`.
    pub definition: bool,
    /// String literals appearing directly in the argument list.
    pub string_args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident { name: String, after_dot: bool },
    Str(String),
    Open,
    Close,
    Other,
}

fn tokenize(code: &str) -> Vec<Token> {
    let chars: Vec<char> = code.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut last_sig: Option<char> = None;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '"' || c == '\'' {
            let quote = c;
            i += 1;
            let mut s = String::new();
            while i < chars.len() && chars[i] != quote && chars[i] != '\n' {
                if chars[i] == '\\' && i + 1 < chars.len() {
                    s.push(chars[i + 1]);
                    i += 2;
                    continue;
                }
                s.push(chars[i]);
                i += 1;
            }
            i += 1;
            out.push(Token::Str(s));
            last_sig = Some(quote);
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let name: String = chars[start..i].iter().collect();
            out.push(Token::Ident { name, after_dot: last_sig == Some('.') });
            last_sig = Some('a');
            continue;
        }
        if c.is_ascii_digit() {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                i += 1;
            }
            out.push(Token::Other);
            last_sig = Some('0');
            continue;
        }
        match c {
            '(' => out.push(Token::Open),
            ')' => out.push(Token::Close),
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            _ => out.push(Token::Other),
        }
        last_sig = Some(c);
        i += 1;
    }
    out
}

/// Scans code for call sites in source order.
pub fn scan_calls(code: &str) -> Vec<CallSite> {
    let tokens = tokenize(code);
    let mut sites: Vec<CallSite> = Vec::new();
    // Each open paren maps to the call site it opened, if any.
    let mut stack: Vec<Option<usize>> = Vec::new();
    for (idx, tok) in tokens.iter().enumerate() {
        match tok {
            Token::Open => {
                let site = match idx.checked_sub(1).map(|p| &tokens[p]) {
                    Some(Token::Ident { name, after_dot }) if !KEYWORDS.contains(&name.as_str()) => {
                        let definition = idx >= 2
                            && matches!(&tokens[idx - 2], Token::Ident { name, .. } if name == "def");
                        sites.push(CallSite {
                            name: name.clone(),
                            attribute: *after_dot,
                            definition,
                            string_args: Vec::new(),
                        });
                        Some(sites.len() - 1)
                    }
                    _ => None,
                };
                stack.push(site);
            }
            Token::Close => {
                stack.pop();
            }
            Token::Str(s) => {
                if let Some(Some(site)) = stack.last() {
                    sites[*site].string_args.push(s.clone());
                }
            }
            _ => {}
        }
    }
    sites
}

/// Free function calls: not attribute calls, definitions or keywords.
pub fn extract_api_calls(code: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    scan_calls(code)
        .into_iter()
        .filter(|c| !c.attribute && !c.definition)
        .filter_map(|c| seen.insert(c.name.clone()).then_some(c.name))
        .collect()
}

/// Splits code into logical lines: comments stripped, bracketed
/// continuations joined, blank lines dropped.
pub fn logical_lines(code: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut depth: i32 = 0;
    for raw in code.lines() {
        let line = strip_comment(raw);
        for c in line.chars() {
            match c {
                '(' | '[' | '{' => depth += 1,
                ')' | ']' | '}' => depth -= 1,
                _ => {}
            }
        }
        if !current.is_empty() {
            current.push(' ');
        }
        current.push_str(line.trim());
        if depth <= 0 {
            depth = 0;
            if !current.trim().is_empty() {
                out.push(std::mem::take(&mut current));
            }
            current.clear();
        }
    }
    if !current.trim().is_empty() {
        out.push(current);
    }
    out
}

fn strip_comment(line: &str) -> &str {
    let mut quote: Option<char> = None;
    for (i, c) in line.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => quote = Some(c),
            None if c == '#' => return &line[..i],
            None => {}
        }
    }
    line
}

/// An assignment statement `a, b = rhs` (not `==`, `<=`, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub targets: Vec<String>,
    pub rhs: String,
}

pub fn parse_assignment(line: &str) -> Option<Assignment> {
    let bytes = line.as_bytes();
    let mut depth = 0i32;
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b'=' if depth == 0 => {
                let prev = if i > 0 { bytes[i - 1] } else { b' ' };
                let next = bytes.get(i + 1).copied().unwrap_or(b' ');
                if next == b'=' || matches!(prev, b'=' | b'!' | b'<' | b'>') {
                    return None;
                }
                // Augmented assignment `x += 1` counts as assigning x.
                let lhs_end = if matches!(prev, b'+' | b'-' | b'*' | b'/') { i - 1 } else { i };
                let lhs = &line[..lhs_end];
                let targets: Vec<String> = lhs.split(',').map(|t| t.trim().to_string()).collect();
                if targets.iter().all(|t| is_identifier(t)) {
                    return Some(Assignment { targets, rhs: line[i + 1..].trim().to_string() });
                }
                return None;
            }
            _ => {}
        }
    }
    None
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

/// Identifier tokens (not attributes, not inside strings) in a code fragment.
pub fn identifiers(code: &str) -> Vec<String> {
    tokenize(code)
        .into_iter()
        .filter_map(|t| match t {
            Token::Ident { name, after_dot: false } => Some(name),
            _ => None,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// API catalog

pub const DEFAULT_STOP_LIST: &[&str] = &[
    "abs", "all", "any", "arccos", "arcsin", "arctan", "arctan2", "array", "atan2", "bool", "clip",
    "cos", "cross", "dict", "dot", "enumerate", "exp", "float", "int", "isinstance", "len", "list",
    "log", "max", "maximum", "mean", "min", "minimum", "norm", "ones", "pow", "range", "round",
    "sin", "sorted", "sqrt", "str", "sum", "tan", "tanh", "tuple", "zeros", "zip",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiCatalog {
    pub primitive_apis: BTreeSet<String>,
    pub reward_apis: BTreeSet<String>,
    #[serde(default)]
    pub shared: BTreeSet<String>,
    /// Builtin and numeric identifiers that are never checked.
    #[serde(default = "default_stop_list")]
    pub stop_list: BTreeSet<String>,
}

fn default_stop_list() -> BTreeSet<String> {
    DEFAULT_STOP_LIST.iter().map(|s| s.to_string()).collect()
}

fn to_set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for ApiCatalog {
    /// The simulator API allow-list used by the judge prompt.
    fn default() -> Self {
        ApiCatalog {
            primitive_apis: to_set(&["grasp_object", "grasp_object_link", "release_grasp", "check_grasped"]),
            reward_apis: to_set(&[
                "get_eef_pos",
                "get_position",
                "get_link_state",
                "get_joint_state",
                "get_joint_limit",
                "get_bounding_box",
                "get_bounding_box_link",
                "in_bbox",
            ]),
            shared: BTreeSet::new(),
            stop_list: default_stop_list(),
        }
    }
}

impl ApiCatalog {
    pub fn new(
        primitive_apis: BTreeSet<String>,
        reward_apis: BTreeSet<String>,
        shared: BTreeSet<String>,
        stop_list: BTreeSet<String>,
    ) -> Result<Self, TraceError> {
        let catalog = ApiCatalog { primitive_apis, reward_apis, shared, stop_list };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let pairs = [
            ("primitive", &self.primitive_apis, "reward", &self.reward_apis),
            ("primitive", &self.primitive_apis, "shared", &self.shared),
            ("reward", &self.reward_apis, "shared", &self.shared),
        ];
        for (an, a, bn, b) in pairs {
            if let Some(x) = a.intersection(b).next() {
                return Err(TraceError::InvalidCatalog(format!("`{x}` is in both {an} and {bn}")));
            }
        }
        if self.primitive_apis.is_empty() && self.reward_apis.is_empty() && self.shared.is_empty() {
            return Err(TraceError::InvalidCatalog("catalog is empty".into()));
        }
        Ok(())
    }

    pub fn allows(&self, variant: Variant, name: &str) -> bool {
        let own = match variant {
            Variant::Primitive => &self.primitive_apis,
            Variant::RewardFunction => &self.reward_apis,
        };
        own.contains(name) || self.shared.contains(name) || self.stop_list.contains(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.primitive_apis.contains(name) || self.reward_apis.contains(name) || self.shared.contains(name)
    }

    /// All checked API names, sorted.
    pub fn api_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .primitive_apis
            .iter()
            .chain(&self.reward_apis)
            .chain(&self.shared)
            .cloned()
            .collect();
        names.sort();
        names
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub offending: Vec<String>,
}

pub fn validate_apis(s: &Supervision, catalog: &ApiCatalog) -> ValidationReport {
    let offending: Vec<String> =
        s.api_calls.iter().filter(|c| !catalog.allows(s.variant, c)).cloned().collect();
    ValidationReport { ok: offending.is_empty(), offending }
}

// ---------------------------------------------------------------------------
// Solutions and prefixes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub task: String,
    pub scene: SceneConfiguration,
    pub subtasks: Vec<Subtask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_success: Option<bool>,
    /// Set when the policy never produced a parseable answer.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl Solution {
    pub fn new(task: impl Into<String>, scene: SceneConfiguration, subtasks: Vec<Subtask>) -> Result<Self, TraceError> {
        if subtasks.is_empty() {
            return Err(TraceError::EmptySolution);
        }
        Ok(Solution { task: task.into(), scene, subtasks, overall_success: None, degenerate: false })
    }

    /// Placeholder for a generation that never parsed: one empty subtask.
    pub fn degenerate(task: impl Into<String>, raw: &str) -> Self {
        Solution {
            task: task.into(),
            scene: SceneConfiguration { raw_text: raw.trim().to_string(), ..Default::default() },
            subtasks: vec![Subtask::new("degenerate", Supervision::new(Variant::Primitive, ""))],
            overall_success: Some(false),
            degenerate: true,
        }
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    /// Same scene text and subtask sequence (execution bits ignored).
    pub fn same_content(&self, other: &Solution) -> bool {
        self.scene.raw_text == other.scene.raw_text
            && self.subtasks.len() == other.subtasks.len()
            && self.subtasks.iter().zip(&other.subtasks).all(|(a, b)| a.same_content(b))
    }

    /// Renders in the same text format `parse_solution` reads.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.scene.raw_text.is_empty() {
            out.push_str(&self.scene.raw_text);
            out.push_str("\n\n");
        }
        let body: Vec<String> = self.subtasks.iter().enumerate().map(|(i, s)| s.render(i + 1)).collect();
        out.push_str(&body.join("\n\n"));
        out
    }
}

/// Parses a generated solution: scene preamble, then `subtask N: name`
/// headers each followed by one fenced supervision block.
pub fn parse_solution(task: &str, raw: &str) -> Result<Solution, TraceError> {
    let (scene_text, chunks) = split_subtask_chunks(raw);
    if chunks.is_empty() {
        return Err(TraceError::NoCodeBlock);
    }
    let scene = SceneConfiguration::parse(&scene_text)?;
    let subtasks = chunks
        .iter()
        .map(|(name, body)| parse_subtask(body, Some(name)))
        .collect::<Result<Vec<_>, _>>()?;
    Solution::new(task, scene, subtasks)
}

/// Parses only subtask chunks (used for completer continuations). An answer
/// with no subtask headers yields an empty list.
pub fn parse_subtasks(raw: &str) -> Result<Vec<Subtask>, TraceError> {
    let (_, chunks) = split_subtask_chunks(raw);
    chunks.iter().map(|(name, body)| parse_subtask(body, Some(name))).collect()
}

fn split_subtask_chunks(raw: &str) -> (String, Vec<(String, String)>) {
    let mut preamble = String::new();
    let mut chunks: Vec<(String, String)> = Vec::new();
    let mut in_block = false;
    for line in raw.lines() {
        let trimmed = line.trim();
        if !in_block {
            if let Some(name) = split_subtask_header(trimmed) {
                chunks.push((name.to_string(), String::new()));
                continue;
            }
        }
        if trimmed.starts_with("```") {
            in_block = !in_block || trimmed != "```";
        }
        match chunks.last_mut() {
            Some((_, body)) => {
                body.push_str(line);
                body.push('\n');
            }
            None => {
                preamble.push_str(line);
                preamble.push('\n');
            }
        }
    }
    (preamble, chunks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePrefix {
    pub scene: SceneConfiguration,
    pub subtasks: Vec<Subtask>,
}

impl TracePrefix {
    pub fn m(&self) -> usize {
        self.subtasks.len()
    }

    pub fn as_solution(&self, task: &str) -> Solution {
        Solution {
            task: task.to_string(),
            scene: self.scene.clone(),
            subtasks: self.subtasks.clone(),
            overall_success: None,
            degenerate: false,
        }
    }

    /// Content equality ignoring execution bits.
    pub fn same_content(&self, other: &TracePrefix) -> bool {
        self.scene.raw_text == other.scene.raw_text
            && self.subtasks.len() == other.subtasks.len()
            && self.subtasks.iter().zip(&other.subtasks).all(|(a, b)| a.same_content(b))
    }
}

/// The scene plus the first `m` subtasks of `sol`.
pub fn prefix(sol: &Solution, m: usize) -> Result<TracePrefix, TraceError> {
    if m == 0 || m > sol.subtasks.len() {
        return Err(TraceError::OutOfRange { m, len: sol.subtasks.len() });
    }
    Ok(TracePrefix { scene: sol.scene.clone(), subtasks: sol.subtasks[..m].to_vec() })
}
