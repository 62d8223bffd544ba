//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use aiexposure::annotate::PostingInput;
use serde::Deserialize;

const SPECIALIZED: [&str; 9] = [
    "SQL",
    "Python",
    "Tableau",
    "Forecasting",
    "Payroll",
    "AutoCAD",
    "Welding",
    "Phlebotomy",
    "Salesforce",
];
const COMMON: [&str; 5] = [
    "Communication",
    "Teamwork",
    "Leadership",
    "Scheduling",
    "Customer Service",
];

/// `n` deterministic postings with varied sentence and skill counts; every
/// seventh has no skills at all.
pub fn mock_inputs(n: usize) -> Vec<PostingInput> {
    (0..n)
        .map(|i| {
            let sentences = 2 + i % 11;
            let body = (0..sentences)
                .map(|k| {
                    format!(
                        "Handle duty number {k} for team {} with care and attention to detail.",
                        i % 5
                    )
                })
                .collect::<Vec<_>>()
                .join(" ");
            let no_skills = i % 7 == 3;
            let take = |pool: &[&str], k: usize| -> Vec<String> {
                if no_skills {
                    Vec::new()
                } else {
                    (0..k)
                        .map(|j| pool[(i + j) % pool.len()].to_string())
                        .collect()
                }
            };
            PostingInput {
                posting_id: format!("p{i:03}"),
                title: format!("Role {}", i % 13),
                body,
                specialized_skills: take(&SPECIALIZED, i % 8),
                common_skills: take(&COMMON, 1 + i % 3),
            }
        })
        .collect()
}

#[derive(Debug, Deserialize)]
pub struct Case {
    pub name: String,
    pub stage: u8,
    pub posting: String,
    pub response: String,
    pub class: String,
}

#[derive(Debug, Deserialize)]
pub struct Corpus {
    pub postings: HashMap<String, PostingInput>,
    pub stage1_ok: serde_json::Value,
    pub cases: Vec<Case>,
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn corpus() -> Corpus {
    let text =
        std::fs::read_to_string(fixture("malformed_responses.json")).expect("corpus fixture");
    serde_json::from_str(&text).expect("corpus parses")
}
