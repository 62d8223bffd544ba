//! Two-stage annotation pipeline: task extraction, then exposure labelling.
//!
//! Both stages send a rendered prompt to a [`GenerationBackend`] and validate
//! the returned JSON document before anything reaches the exposure
//! arithmetic. [`MockBackend`] gives deterministic offline responses;
//! [`HttpBackend`] speaks a minimal chat-completions style protocol.

mod backend;
mod batch;
mod mock;
mod prompts;
mod validate;

use serde::{Deserialize, Serialize};

use crate::exposure::{ExposureLabel, SkillKind};

pub use backend::{
    BackendError, GenerationBackend, GenerationRequest, GenerationResponse, HttpBackend,
    PromptStage, API_KEY_ENV,
};
pub use batch::{
    annotate_batch, AnnotateError, AnnotatedPosting, BatchPolicy, BatchRecord, FailureLog,
    FailureRecord, PostingOutcome, StageAttempts,
};
pub use mock::{mock_label, MockBackend};
pub use prompts::{
    render_stage1_prompt, render_stage2_prompt, STAGE1_INPUT_MARKER, STAGE2_INPUT_MARKER,
};
pub use validate::{validate_stage1, validate_stage2, ValidationFailure, Violation};

/// One job posting as handed to stage 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostingInput {
    pub posting_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub specialized_skills: Vec<String>,
    #[serde(default)]
    pub common_skills: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillGroup {
    pub group_id: String,
    pub skills: Vec<String>,
    pub kind: SkillKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedTask {
    pub task_id: String,
    pub text: String,
    pub skill_group_id: String,
}

/// Validated stage-1 result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Output {
    pub posting_id: String,
    pub posting_title: String,
    pub skill_groups: Vec<SkillGroup>,
    pub tasks: Vec<ExtractedTask>,
    /// Soft-rule notes (task length), never grounds for rejection.
    pub warnings: Vec<String>,
}

impl Stage1Output {
    pub fn group(&self, group_id: &str) -> Option<&SkillGroup> {
        self.skill_groups.iter().find(|g| g.group_id == group_id)
    }
}

/// Validated stage-2 result: one label per stage-1 task, in stage-1 order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage2Output {
    pub posting_id: String,
    pub task_exposures: Vec<(String, ExposureLabel)>,
}
