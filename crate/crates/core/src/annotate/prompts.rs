use serde::Serialize;

use super::{PostingInput, Stage1Output};

const STAGE1_TEMPLATE: &str = include_str!("../../prompts/stage1.txt");
const STAGE2_TEMPLATE: &str = include_str!("../../prompts/stage2.txt");

/// Line that precedes the JSON posting record in a stage-1 prompt.
pub const STAGE1_INPUT_MARKER: &str = "JOB POSTING:";
/// Line that precedes the JSON task list in a stage-2 prompt.
pub const STAGE2_INPUT_MARKER: &str = "INPUT:";

#[derive(Serialize)]
struct Stage1Fields<'a> {
    #[serde(rename = "ID")]
    id: &'a str,
    #[serde(rename = "TITLE_NAME")]
    title: &'a str,
    #[serde(rename = "BODY")]
    body: &'a str,
    #[serde(rename = "SPECIALIZED_SKILLS_NAME")]
    specialized: &'a [String],
    #[serde(rename = "COMMON_SKILLS_NAME")]
    common: &'a [String],
}

#[derive(Serialize)]
struct Stage2Task<'a> {
    task_id: &'a str,
    task: &'a str,
}

#[derive(Serialize)]
struct Stage2Fields<'a> {
    posting_id: &'a str,
    posting_title: &'a str,
    tasks: Vec<Stage2Task<'a>>,
}

fn render(template: &str, marker: &str, payload: &impl Serialize) -> String {
    // serde_json keeps struct field order, so equal inputs give equal bytes.
    let json = serde_json::to_string_pretty(payload).expect("prompt payload serializes");
    let mut out = String::with_capacity(template.len() + json.len() + 16);
    out.push_str(template.trim_end());
    out.push_str("\n\n");
    out.push_str(marker);
    out.push('\n');
    out.push_str(&json);
    out.push('\n');
    out
}

pub fn render_stage1_prompt(input: &PostingInput) -> String {
    let fields = Stage1Fields {
        id: &input.posting_id,
        title: &input.title,
        body: &input.body,
        specialized: &input.specialized_skills,
        common: &input.common_skills,
    };
    render(STAGE1_TEMPLATE, STAGE1_INPUT_MARKER, &fields)
}

pub fn render_stage2_prompt(stage1: &Stage1Output, title: &str) -> String {
    let fields = Stage2Fields {
        posting_id: &stage1.posting_id,
        posting_title: title,
        tasks: stage1
            .tasks
            .iter()
            .map(|t| Stage2Task {
                task_id: &t.task_id,
                task: &t.text,
            })
            .collect(),
    };
    render(STAGE2_TEMPLATE, STAGE2_INPUT_MARKER, &fields)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::ExtractedTask;

    fn input() -> PostingInput {
        PostingInput {
            posting_id: "p-1".into(),
            title: "Data Analyst".into(),
            body: "Build weekly dashboards in Tableau. Clean sales data with SQL.".into(),
            specialized_skills: vec!["SQL".into(), "Tableau".into()],
            common_skills: vec!["Communication".into()],
        }
    }

    #[test]
    fn stage1_contains_rubric_and_fields() {
        let p = render_stage1_prompt(&input());
        assert!(p.starts_with("You are an expert in job task analysis"));
        assert!(p.contains("Tasks must be grounded in the BODY text"));
        assert!(p.contains("\"ID\": \"p-1\""));
        assert!(p.contains("\"TITLE_NAME\": \"Data Analyst\""));
        assert!(p.contains("\"SPECIALIZED_SKILLS_NAME\": [\n    \"SQL\""));
        assert!(p.contains("\"COMMON_SKILLS_NAME\""));
    }

    #[test]
    fn stage1_without_skills_still_asks_for_ns0() {
        let mut i = input();
        i.specialized_skills.clear();
        i.common_skills.clear();
        let p = render_stage1_prompt(&i);
        assert!(p.contains("create exactly one group"));
        assert!(p.contains("{\"group_id\": \"NS0\", \"group_skills\": []}"));
        assert!(p.contains("\"SPECIALIZED_SKILLS_NAME\": []"));
    }

    #[test]
    fn renders_are_byte_stable() {
        assert_eq!(
            render_stage1_prompt(&input()),
            render_stage1_prompt(&input())
        );
    }

    #[test]
    fn stage2_lists_every_task() {
        let s1 = Stage1Output {
            posting_id: "p-1".into(),
            posting_title: "Data Analyst".into(),
            skill_groups: vec![],
            tasks: (1..=3)
                .map(|i| ExtractedTask {
                    task_id: format!("t{i}"),
                    text: format!("task number {i}"),
                    skill_group_id: "S1".into(),
                })
                .collect(),
            warnings: vec![],
        };
        let p = render_stage2_prompt(&s1, "Data Analyst");
        assert_eq!(p.matches("\"task_id\":").count(), 3 + 2);
        let json_start = p.rfind(STAGE2_INPUT_MARKER).unwrap() + STAGE2_INPUT_MARKER.len();
        let v: serde_json::Value = serde_json::from_str(p[json_start..].trim()).unwrap();
        assert_eq!(v["tasks"].as_array().unwrap().len(), 3);
        assert!(p.contains("E1 (Direct exposure)"));
        assert!(p.contains("Return ONE JSON object"));
        assert!(p.contains("\"posting_title\": \"Data Analyst\""));
    }
}
