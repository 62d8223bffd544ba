//! Structural checks on raw stage-1 and stage-2 responses.
//!
//! Validation collects every violated rule instead of stopping at the first,
//! so a failure record can name all of them.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use super::{ExtractedTask, PostingInput, SkillGroup, Stage1Output, Stage2Output};
use crate::exposure::{ExposureLabel, SkillKind};

pub const MIN_TASKS: usize = 3;
pub const MAX_TASKS: usize = 10;
pub const MAX_GROUP_SKILLS: usize = 5;
const MIN_TASK_WORDS: usize = 8;
const MAX_TASK_WORDS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("response is not a single JSON object: {0}")]
    ParseFailure(String),
    #[error("posting id mismatch: expected {expected:?}, found {found:?}")]
    PostingIdMismatch { expected: String, found: String },
    #[error("expected 3-10 tasks, found {0}")]
    TaskCountOutOfRange(usize),
    #[error("task {task_id} references unknown skill group {group_id:?}")]
    DanglingGroupReference { task_id: String, group_id: String },
    #[error("skill group {group_id} mixes specialized and common skills")]
    MixedSkillGroup { group_id: String },
    #[error("skill group id {0:?} is not S<n>, C<n> or NS0")]
    InvalidGroupId(String),
    #[error("skill group {0} appears more than once")]
    DuplicateGroupId(String),
    #[error("skill group {group_id} has {size} skills (max 5)")]
    OversizedSkillGroup { group_id: String, size: usize },
    #[error("postings without skills need exactly one empty NS0 group")]
    NoSkillsGroupRule,
    #[error("task {0} has empty text")]
    EmptyTaskText(String),
    #[error("task id {0} is missing")]
    MissingTaskId(String),
    #[error("task id {0} appears more than once")]
    DuplicateTaskId(String),
    #[error("task id {0} is not a stage-1 task")]
    UnexpectedTaskId(String),
    #[error("task {task_id} has label {label:?}, expected E0, E1 or E2")]
    UnknownLabel { task_id: String, label: String },
}

impl Violation {
    /// Stable class name used in failure records.
    pub fn class(&self) -> &'static str {
        match self {
            Violation::ParseFailure(_) => "ParseFailure",
            Violation::PostingIdMismatch { .. } => "PostingIdMismatch",
            Violation::TaskCountOutOfRange(_) => "TaskCountOutOfRange",
            Violation::DanglingGroupReference { .. } => "DanglingGroupReference",
            Violation::MixedSkillGroup { .. } => "MixedSkillGroup",
            Violation::InvalidGroupId(_) => "InvalidGroupId",
            Violation::DuplicateGroupId(_) => "DuplicateGroupId",
            Violation::OversizedSkillGroup { .. } => "OversizedSkillGroup",
            Violation::NoSkillsGroupRule => "NoSkillsGroupRule",
            Violation::EmptyTaskText(_) => "EmptyTaskText",
            Violation::MissingTaskId(_) => "MissingTaskId",
            Violation::DuplicateTaskId(_) => "DuplicateTaskId",
            Violation::UnexpectedTaskId(_) => "UnexpectedTaskId",
            Violation::UnknownLabel { .. } => "UnknownLabel",
        }
    }
}

/// A rejected response with every rule it broke.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationFailure {
    pub stage: u8,
    pub violations: Vec<Violation>,
}

impl ValidationFailure {
    fn new(stage: u8, violations: Vec<Violation>) -> Self {
        ValidationFailure { stage, violations }
    }

    pub fn has(&self, class: &str) -> bool {
        self.violations.iter().any(|v| v.class() == class)
    }

    /// Class of the first violation.
    pub fn class(&self) -> &'static str {
        self.violations
            .first()
            .map_or("ParseFailure", Violation::class)
    }
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} rejected:", self.stage)?;
        for v in &self.violations {
            write!(f, " [{v}]")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationFailure {}

/// Parse the response as exactly one JSON object. A surrounding markdown
/// code fence is tolerated; anything else around the object is not.
fn parse_object(raw: &str) -> Result<serde_json::Map<String, Value>, Violation> {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        text = rest
            .trim()
            .strip_suffix("```")
            .ok_or_else(|| Violation::ParseFailure("unterminated code fence".into()))?
            .trim();
    }
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(other) => Err(Violation::ParseFailure(format!(
            "top-level value is {}",
            kind_of(&other)
        ))),
        Err(e) => Err(Violation::ParseFailure(e.to_string())),
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Identifiers may come back as JSON numbers; accept both.
fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

#[derive(Deserialize)]
struct GroupWire {
    group_id: Value,
    #[serde(default)]
    group_skills: Vec<String>,
}

#[derive(Deserialize)]
struct TaskWire {
    task_id: Value,
    task: String,
    skill_group_id: Value,
}

#[derive(Deserialize)]
struct Stage1Wire {
    posting_id: Value,
    #[serde(default)]
    posting_title: Option<String>,
    skills_groups: Vec<GroupWire>,
    tasks: Vec<TaskWire>,
}

#[derive(Deserialize)]
struct ExposureWire {
    task_id: Value,
    exposure_label: Value,
}

#[derive(Deserialize)]
struct Stage2Wire {
    posting_id: Value,
    task_exposures: Vec<ExposureWire>,
}

fn decode<T: for<'de> Deserialize<'de>>(raw: &str) -> Result<T, Violation> {
    let map = parse_object(raw)?;
    serde_json::from_value(Value::Object(map)).map_err(|e| Violation::ParseFailure(e.to_string()))
}

fn required_id(v: &Value, what: &str) -> Result<String, Violation> {
    id_string(v).ok_or_else(|| Violation::ParseFailure(format!("{what} must be a string")))
}

pub fn validate_stage1(raw: &str, input: &PostingInput) -> Result<Stage1Output, ValidationFailure> {
    let fail = |v: Vec<Violation>| ValidationFailure::new(1, v);
    let wire: Stage1Wire = decode(raw).map_err(|v| fail(vec![v]))?;
    let mut violations = Vec::new();

    let posting_id = required_id(&wire.posting_id, "posting_id").map_err(|v| fail(vec![v]))?;
    if posting_id != input.posting_id {
        violations.push(Violation::PostingIdMismatch {
            expected: input.posting_id.clone(),
            found: posting_id.clone(),
        });
    }

    let specialized: HashSet<&str> = input
        .specialized_skills
        .iter()
        .map(String::as_str)
        .collect();
    let common: HashSet<&str> = input.common_skills.iter().map(String::as_str).collect();

    let mut groups = Vec::with_capacity(wire.skills_groups.len());
    let mut seen_groups = HashSet::new();
    for g in &wire.skills_groups {
        let id = required_id(&g.group_id, "group_id").map_err(|v| fail(vec![v]))?;
        if !seen_groups.insert(id.clone()) {
            violations.push(Violation::DuplicateGroupId(id.clone()));
        }
        let kind = match SkillKind::from_group_id(&id) {
            Ok(k) => k,
            Err(_) => {
                violations.push(Violation::InvalidGroupId(id.clone()));
                continue;
            }
        };
        if g.group_skills.len() > MAX_GROUP_SKILLS {
            violations.push(Violation::OversizedSkillGroup {
                group_id: id.clone(),
                size: g.group_skills.len(),
            });
        }
        let mixed = match kind {
            SkillKind::Specialized => g
                .group_skills
                .iter()
                .any(|s| common.contains(s.as_str()) && !specialized.contains(s.as_str())),
            SkillKind::Common => g
                .group_skills
                .iter()
                .any(|s| specialized.contains(s.as_str()) && !common.contains(s.as_str())),
            SkillKind::NoSkills => !g.group_skills.is_empty(),
        };
        if mixed {
            violations.push(Violation::MixedSkillGroup {
                group_id: id.clone(),
            });
        }
        groups.push(SkillGroup {
            group_id: id,
            skills: g.group_skills.clone(),
            kind,
        });
    }

    if specialized.is_empty() && common.is_empty() {
        let only_ns0 =
            wire.skills_groups.len() == 1 && groups.len() == 1 && groups[0].group_id == "NS0";
        if !only_ns0 {
            violations.push(Violation::NoSkillsGroupRule);
        }
    }

    let n = wire.tasks.len();
    if !(MIN_TASKS..=MAX_TASKS).contains(&n) {
        violations.push(Violation::TaskCountOutOfRange(n));
    }

    let mut tasks = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    let mut seen_tasks = HashSet::new();
    for t in &wire.tasks {
        let task_id = required_id(&t.task_id, "task_id").map_err(|v| fail(vec![v]))?;
        let group_id =
            required_id(&t.skill_group_id, "skill_group_id").map_err(|v| fail(vec![v]))?;
        if !seen_tasks.insert(task_id.clone()) {
            violations.push(Violation::DuplicateTaskId(task_id.clone()));
        }
        if !seen_groups.contains(&group_id) {
            violations.push(Violation::DanglingGroupReference {
                task_id: task_id.clone(),
                group_id: group_id.clone(),
            });
        }
        let text = t.task.trim();
        if text.is_empty() {
            violations.push(Violation::EmptyTaskText(task_id.clone()));
        }
        let words = text.split_whitespace().count();
        if !(MIN_TASK_WORDS..=MAX_TASK_WORDS).contains(&words) {
            warnings.push(format!("task {task_id} has {words} words (expected 8-50)"));
        }
        tasks.push(ExtractedTask {
            task_id,
            text: text.to_string(),
            skill_group_id: group_id,
        });
    }

    if !violations.is_empty() {
        return Err(fail(violations));
    }
    Ok(Stage1Output {
        posting_id,
        posting_title: wire.posting_title.unwrap_or_else(|| input.title.clone()),
        skill_groups: groups,
        tasks,
        warnings,
    })
}

pub fn validate_stage2(
    raw: &str,
    stage1: &Stage1Output,
) -> Result<Stage2Output, ValidationFailure> {
    let fail = |v: Vec<Violation>| ValidationFailure::new(2, v);
    let wire: Stage2Wire = decode(raw).map_err(|v| fail(vec![v]))?;
    let mut violations = Vec::new();

    let posting_id = required_id(&wire.posting_id, "posting_id").map_err(|v| fail(vec![v]))?;
    if posting_id != stage1.posting_id {
        violations.push(Violation::PostingIdMismatch {
            expected: stage1.posting_id.clone(),
            found: posting_id,
        });
    }

    let expected: HashSet<&str> = stage1.tasks.iter().map(|t| t.task_id.as_str()).collect();
    let mut labels: HashMap<String, ExposureLabel> = HashMap::new();
    let mut seen = HashSet::new();
    for e in &wire.task_exposures {
        let task_id = required_id(&e.task_id, "task_id").map_err(|v| fail(vec![v]))?;
        if !seen.insert(task_id.clone()) {
            violations.push(Violation::DuplicateTaskId(task_id));
            continue;
        }
        if !expected.contains(task_id.as_str()) {
            violations.push(Violation::UnexpectedTaskId(task_id));
            continue;
        }
        let label_text = match &e.exposure_label {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        match label_text.parse::<ExposureLabel>() {
            Ok(label) => {
                labels.insert(task_id, label);
            }
            Err(_) => violations.push(Violation::UnknownLabel {
                task_id,
                label: label_text,
            }),
        }
    }
    for t in &stage1.tasks {
        if !seen.contains(&t.task_id) {
            violations.push(Violation::MissingTaskId(t.task_id.clone()));
        }
    }

    if !violations.is_empty() {
        return Err(fail(violations));
    }
    let task_exposures = stage1
        .tasks
        .iter()
        .map(|t| (t.task_id.clone(), labels[&t.task_id]))
        .collect();
    Ok(Stage2Output {
        posting_id: stage1.posting_id.clone(),
        task_exposures,
    })
}

impl Stage2Output {
    /// Join labels onto the stage-1 tasks, producing exposure-ready annotations.
    pub fn annotations(&self, stage1: &Stage1Output) -> Vec<crate::exposure::TaskAnnotation> {
        stage1
            .tasks
            .iter()
            .zip(&self.task_exposures)
            .map(|(task, (_, label))| {
                let kind = stage1
                    .group(&task.skill_group_id)
                    .map_or(SkillKind::Common, |g| g.kind);
                crate::exposure::TaskAnnotation {
                    task_id: task.task_id.clone(),
                    text: task.text.clone(),
                    skill: crate::exposure::SkillMatch {
                        group_id: task.skill_group_id.clone(),
                        kind,
                    },
                    label: *label,
                }
            })
            .collect()
    }
}
