//! Deterministic offline backend.
//!
//! Stage 1 splits BODY into sentences and uses them as tasks; stage 2 labels
//! each task from a hash of posting id and task text. No randomness and no
//! wall-clock input, so identical prompts give identical bytes.

use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::backend::{
    BackendError, GenerationBackend, GenerationRequest, GenerationResponse, PromptStage,
};
use super::prompts::{STAGE1_INPUT_MARKER, STAGE2_INPUT_MARKER};
use super::validate::{MAX_GROUP_SKILLS, MAX_TASKS, MIN_TASKS};
use crate::exposure::ExposureLabel;

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn new() -> Self {
        MockBackend
    }
}

/// Label a task by `sha256(posting_id NUL text) mod 100`:
/// `[0,50)` is E0, `[50,80)` is E1, `[80,100)` is E2.
pub fn mock_label(posting_id: &str, text: &str) -> ExposureLabel {
    let mut h = Sha256::new();
    h.update(posting_id.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    match u64::from_be_bytes(head) % 100 {
        0..=49 => ExposureLabel::E0,
        50..=79 => ExposureLabel::E1,
        _ => ExposureLabel::E2,
    }
}

fn payload(prompt: &str, marker: &str) -> Result<Value, BackendError> {
    let at = prompt
        .rfind(marker)
        .ok_or_else(|| BackendError::Unavailable(format!("prompt has no {marker:?} section")))?;
    serde_json::from_str(prompt[at + marker.len()..].trim())
        .map_err(|e| BackendError::Unavailable(format!("prompt payload is not JSON: {e}")))
}

fn str_field<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

fn str_list(v: &Value, key: &str) -> Vec<String> {
    v.get(key)
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(Value::as_str)
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn sentences(body: &str) -> Vec<String> {
    body.split(['.', '!', '?', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn mock_tasks(body: &str, title: &str) -> Vec<String> {
    let mut tasks = sentences(body);
    tasks.truncate(MAX_TASKS);
    let seeds = if tasks.is_empty() {
        let base = if title.trim().is_empty() {
            "Carry out the duties of this posting"
        } else {
            title.trim()
        };
        vec![base.to_string()]
    } else {
        tasks.clone()
    };
    let mut k = 1;
    while tasks.len() < MIN_TASKS {
        let base = &seeds[(k - 1) % seeds.len()];
        tasks.push(format!("{base} (follow-up {k})"));
        k += 1;
    }
    tasks
}

fn stage1(prompt: &str) -> Result<String, BackendError> {
    let input = payload(prompt, STAGE1_INPUT_MARKER)?;
    let id = str_field(&input, "ID");
    let title = str_field(&input, "TITLE_NAME");
    let specialized = str_list(&input, "SPECIALIZED_SKILLS_NAME");
    let common = str_list(&input, "COMMON_SKILLS_NAME");

    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for (i, chunk) in specialized.chunks(MAX_GROUP_SKILLS).enumerate() {
        groups.push((format!("S{}", i + 1), chunk.to_vec()));
    }
    for (i, chunk) in common.chunks(MAX_GROUP_SKILLS).enumerate() {
        groups.push((format!("C{}", i + 1), chunk.to_vec()));
    }
    if groups.is_empty() {
        groups.push(("NS0".to_string(), Vec::new()));
    }

    let tasks: Vec<Value> = mock_tasks(str_field(&input, "BODY"), title)
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            json!({
                "task_id": format!("t{}", i + 1),
                "task": text,
                "skill_group_id": groups[i % groups.len()].0,
            })
        })
        .collect();
    let groups: Vec<Value> = groups
        .into_iter()
        .map(|(id, skills)| json!({"group_id": id, "group_skills": skills}))
        .collect();
    let out = json!({
        "posting_id": id,
        "posting_title": title,
        "skills_groups": groups,
        "tasks": tasks,
    });
    Ok(out.to_string())
}

fn stage2(prompt: &str) -> Result<String, BackendError> {
    let input = payload(prompt, STAGE2_INPUT_MARKER)?;
    let id = str_field(&input, "posting_id");
    let labels: Vec<Value> = input
        .get("tasks")
        .and_then(Value::as_array)
        .map(Vec::as_slice)
        .unwrap_or_default()
        .iter()
        .map(|t| {
            let label = mock_label(id, str_field(t, "task"));
            json!({"task_id": str_field(t, "task_id"), "exposure_label": label.as_str()})
        })
        .collect();
    Ok(json!({"posting_id": id, "task_exposures": labels}).to_string())
}

impl GenerationBackend for MockBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let text = match request.prompt_template_id {
            PromptStage::Stage1 => stage1(&request.prompt)?,
            PromptStage::Stage2 => stage2(&request.prompt)?,
        };
        Ok(GenerationResponse {
            text,
            prompt_tokens: None,
            completion_tokens: None,
            latency: Duration::ZERO,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{
        render_stage1_prompt, render_stage2_prompt, validate_stage1, validate_stage2, PostingInput,
    };
    use crate::exposure::SkillKind;

    fn posting(body: &str, spec: &[&str], common: &[&str]) -> PostingInput {
        PostingInput {
            posting_id: "m-1".into(),
            title: "Engineer".into(),
            body: body.into(),
            specialized_skills: spec.iter().map(|s| s.to_string()).collect(),
            common_skills: common.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn run_stage1(p: &PostingInput) -> String {
        let req = GenerationRequest::new(PromptStage::Stage1, render_stage1_prompt(p), "mock");
        MockBackend.generate(&req).unwrap().text
    }

    #[test]
    fn same_posting_same_bytes() {
        let p = posting(
            "Design APIs. Review code! Mentor juniors?",
            &["Rust"],
            &["Teamwork"],
        );
        assert_eq!(run_stage1(&p), run_stage1(&p));
    }

    #[test]
    fn one_sentence_is_padded_to_three_tasks() {
        let p = posting("Maintain the billing service", &["Java"], &[]);
        let s1 = validate_stage1(&run_stage1(&p), &p).unwrap();
        let texts: Vec<&str> = s1.tasks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(
            texts,
            [
                "Maintain the billing service",
                "Maintain the billing service (follow-up 1)",
                "Maintain the billing service (follow-up 2)"
            ]
        );
    }

    #[test]
    fn long_body_is_clamped_and_groups_round_robin() {
        let body: String = (1..=14).map(|i| format!("Sentence number {i}. ")).collect();
        let skills: Vec<String> = (0..7).map(|i| format!("skill{i}")).collect();
        let spec: Vec<&str> = skills.iter().map(String::as_str).collect();
        let p = posting(&body, &spec, &["Writing"]);
        let s1 = validate_stage1(&run_stage1(&p), &p).unwrap();
        assert_eq!(s1.tasks.len(), 10);
        let ids: Vec<&str> = s1
            .skill_groups
            .iter()
            .map(|g| g.group_id.as_str())
            .collect();
        assert_eq!(ids, ["S1", "S2", "C1"]);
        assert_eq!(s1.skill_groups[0].skills.len(), 5);
        let assigned: Vec<&str> = s1
            .tasks
            .iter()
            .take(4)
            .map(|t| t.skill_group_id.as_str())
            .collect();
        assert_eq!(assigned, ["S1", "S2", "C1", "S1"]);
    }

    #[test]
    fn no_skills_gives_ns0() {
        let p = posting("", &[], &[]);
        let s1 = validate_stage1(&run_stage1(&p), &p).unwrap();
        assert_eq!(s1.skill_groups.len(), 1);
        assert_eq!(s1.skill_groups[0].kind, SkillKind::NoSkills);
        assert_eq!(s1.tasks[0].text, "Engineer (follow-up 1)");
    }

    #[test]
    fn stage2_round_trip_is_total() {
        let p = posting(
            "Write reports. Build models. Present findings.",
            &["R"],
            &["Speaking"],
        );
        let s1 = validate_stage1(&run_stage1(&p), &p).unwrap();
        let req = GenerationRequest::new(
            PromptStage::Stage2,
            render_stage2_prompt(&s1, &p.title),
            "mock",
        );
        let s2 = validate_stage2(&MockBackend.generate(&req).unwrap().text, &s1).unwrap();
        for ((id, label), task) in s2.task_exposures.iter().zip(&s1.tasks) {
            assert_eq!(id, &task.task_id);
            assert_eq!(*label, mock_label("m-1", &task.text));
        }
    }

    #[test]
    fn label_frequencies_follow_the_hash_split() {
        let n = 10_000;
        let mut counts = [0usize; 3];
        for i in 0..n {
            let l = mock_label(&format!("p{}", i / 7), &format!("task text {i}"));
            counts[l as usize] += 1;
        }
        for (c, target) in counts.iter().zip([0.5, 0.3, 0.2]) {
            let freq = *c as f64 / n as f64;
            assert!((freq - target).abs() < 0.02, "{counts:?}");
        }
    }
}
