//! Task labels, skill-group matches and the posting-level exposure indices.
//!
//! A posting is a list of annotated tasks. Each task carries a raw weight
//! (2 for tasks matched to a specialized-skill group, 1 otherwise) and one
//! exposure label. Raw weights are normalized within the posting and the
//! weighted label shares give the three indices: `alpha` (direct exposure
//! only), `beta` (direct plus half of indirect) and `gamma` (direct plus
//! indirect).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExposureError {
    #[error("posting has no usable tasks")]
    EmptyTaskList,
    #[error("raw weight {0} is not 1 or 2")]
    InvalidRawWeight(u32),
    #[error("E2 weight {0} is outside [0, 1]")]
    OutOfRangeWeight(f64),
    #[error("skill group id {0:?} does not start with S, C or equal NS0")]
    UnknownSkillGroup(String),
    #[error("unknown exposure label {0:?}")]
    UnknownLabel(String),
}

/// Task-level rubric label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExposureLabel {
    /// No meaningful time saving from an off-the-shelf tool.
    E0,
    /// Direct exposure: a single off-the-shelf tool halves the time.
    E1,
    /// Indirect exposure: needs a thin software layer on top of a tool.
    E2,
}

impl ExposureLabel {
    pub const ALL: [ExposureLabel; 3] = [ExposureLabel::E0, ExposureLabel::E1, ExposureLabel::E2];

    pub fn as_str(self) -> &'static str {
        match self {
            ExposureLabel::E0 => "E0",
            ExposureLabel::E1 => "E1",
            ExposureLabel::E2 => "E2",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ExposureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExposureLabel {
    type Err = ExposureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "E0" => Ok(ExposureLabel::E0),
            "E1" => Ok(ExposureLabel::E1),
            "E2" => Ok(ExposureLabel::E2),
            other => Err(ExposureError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SkillKind {
    Specialized,
    Common,
    NoSkills,
}

impl SkillKind {
    /// Raw task weight implied by the matched group kind. Unmatched (NS0)
    /// tasks count like common-skill tasks.
    pub fn raw_weight(self) -> u32 {
        match self {
            SkillKind::Specialized => 2,
            SkillKind::Common | SkillKind::NoSkills => 1,
        }
    }

    /// Infer the kind from a group id: `S<n>`, `C<n>` or `NS0`.
    pub fn from_group_id(group_id: &str) -> Result<Self, ExposureError> {
        let numbered = |rest: &str| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit());
        if group_id == "NS0" {
            Ok(SkillKind::NoSkills)
        } else if let Some(rest) = group_id.strip_prefix('S') {
            if numbered(rest) {
                Ok(SkillKind::Specialized)
            } else {
                Err(ExposureError::UnknownSkillGroup(group_id.to_string()))
            }
        } else if let Some(rest) = group_id.strip_prefix('C') {
            if numbered(rest) {
                Ok(SkillKind::Common)
            } else {
                Err(ExposureError::UnknownSkillGroup(group_id.to_string()))
            }
        } else {
            Err(ExposureError::UnknownSkillGroup(group_id.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillMatch {
    pub group_id: String,
    pub kind: SkillKind,
}

impl SkillMatch {
    pub fn new(group_id: impl Into<String>) -> Result<Self, ExposureError> {
        let group_id = group_id.into();
        let kind = SkillKind::from_group_id(&group_id)?;
        Ok(SkillMatch { group_id, kind })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAnnotation {
    pub task_id: String,
    pub text: String,
    pub skill: SkillMatch,
    pub label: ExposureLabel,
}

impl TaskAnnotation {
    pub fn raw_weight(&self) -> u32 {
        self.skill.kind.raw_weight()
    }
}

/// Weighted label shares of one posting, in E0/E1/E2 order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelShares {
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostingExposure {
    pub posting_id: String,
    pub shares: LabelShares,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n_tasks: usize,
}

impl PostingExposure {
    /// Build the indices from already-computed shares.
    pub fn from_shares(posting_id: impl Into<String>, shares: LabelShares, n_tasks: usize) -> Self {
        let alpha = shares.e1;
        let gamma = shares.e1 + shares.e2;
        PostingExposure {
            posting_id: posting_id.into(),
            shares,
            alpha,
            beta: shares.e1 + 0.5 * shares.e2,
            gamma,
            n_tasks,
        }
    }
}

/// Which posting-level index feeds downstream aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum IndexChoice {
    Alpha,
    #[default]
    Beta,
    Gamma,
    /// `E1 + w * E2` for an arbitrary `w` in [0, 1].
    Custom(f64),
}

impl IndexChoice {
    pub fn value(&self, exposure: &PostingExposure) -> f64 {
        match *self {
            IndexChoice::Alpha => exposure.alpha,
            IndexChoice::Beta => exposure.beta,
            IndexChoice::Gamma => exposure.gamma,
            IndexChoice::Custom(w) => exposure.shares.e1 + w * exposure.shares.e2,
        }
    }

    pub fn validate(&self) -> Result<(), ExposureError> {
        if let IndexChoice::Custom(w) = *self {
            if !(0.0..=1.0).contains(&w) {
                return Err(ExposureError::OutOfRangeWeight(w));
            }
        }
        Ok(())
    }
}

impl fmt::Display for IndexChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexChoice::Alpha => f.write_str("alpha"),
            IndexChoice::Beta => f.write_str("beta"),
            IndexChoice::Gamma => f.write_str("gamma"),
            IndexChoice::Custom(w) => write!(f, "custom:{w}"),
        }
    }
}

impl FromStr for IndexChoice {
    type Err = ExposureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let choice = match s.trim() {
            "alpha" => IndexChoice::Alpha,
            "beta" => IndexChoice::Beta,
            "gamma" => IndexChoice::Gamma,
            other => {
                let w = other
                    .strip_prefix("custom:")
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| ExposureError::UnknownLabel(other.to_string()))?;
                IndexChoice::Custom(w)
            }
        };
        choice.validate()?;
        Ok(choice)
    }
}

/// Normalize raw task weights so they sum to one, preserving order.
pub fn normalize_weights(tasks: &[TaskAnnotation]) -> Result<Vec<f64>, ExposureError> {
    let raws: Vec<u32> = tasks.iter().map(TaskAnnotation::raw_weight).collect();
    normalize_raw(&raws)
}

/// Same as [`normalize_weights`] over bare raw weights.
pub fn normalize_raw(raws: &[u32]) -> Result<Vec<f64>, ExposureError> {
    if raws.is_empty() {
        return Err(ExposureError::EmptyTaskList);
    }
    if let Some(&bad) = raws.iter().find(|&&r| r != 1 && r != 2) {
        return Err(ExposureError::InvalidRawWeight(bad));
    }
    let total: u32 = raws.iter().sum();
    Ok(raws
        .iter()
        .map(|&r| f64::from(r) / f64::from(total))
        .collect())
}

/// Weighted label shares from `(weight, label)` pairs. Weights need only be
/// positive; they are normalized here, so any common scale cancels.
pub fn label_shares<I>(pairs: I) -> Result<LabelShares, ExposureError>
where
    I: IntoIterator<Item = (f64, ExposureLabel)>,
{
    let mut mass = [0.0_f64; 3];
    let mut total = 0.0;
    let mut n = 0usize;
    for (w, label) in pairs {
        mass[label.slot()] += w;
        total += w;
        n += 1;
    }
    if n == 0 || total <= 0.0 {
        return Err(ExposureError::EmptyTaskList);
    }
    // Fold the rounding remainder into E0 so the shares sum to one.
    let e1 = mass[1] / total;
    let e2 = mass[2] / total;
    let e0 = if mass[0] == 0.0 { 0.0 } else { 1.0 - e1 - e2 };
    Ok(LabelShares { e0, e1, e2 })
}

/// Posting exposure from compact `(raw_weight, label)` pairs.
pub fn exposure_from_parts(
    posting_id: impl Into<String>,
    parts: &[(u32, ExposureLabel)],
) -> Result<PostingExposure, ExposureError> {
    if let Some(&(bad, _)) = parts.iter().find(|(r, _)| *r != 1 && *r != 2) {
        return Err(ExposureError::InvalidRawWeight(bad));
    }
    let shares = label_shares(parts.iter().map(|&(r, l)| (f64::from(r), l)))?;
    Ok(PostingExposure::from_shares(
        posting_id,
        shares,
        parts.len(),
    ))
}

pub fn compute_exposure(
    posting_id: impl Into<String>,
    tasks: &[TaskAnnotation],
) -> Result<PostingExposure, ExposureError> {
    let weights = normalize_weights(tasks)?;
    let shares = label_shares(weights.into_iter().zip(tasks.iter().map(|t| t.label)))?;
    Ok(PostingExposure::from_shares(
        posting_id,
        shares,
        tasks.len(),
    ))
}

/// `E1 + e2_weight * E2`; equals alpha at 0, beta at 0.5 and gamma at 1.
pub fn custom_index(exposure: &PostingExposure, e2_weight: f64) -> Result<f64, ExposureError> {
    if !(0.0..=1.0).contains(&e2_weight) {
        return Err(ExposureError::OutOfRangeWeight(e2_weight));
    }
    Ok(exposure.shares.e1 + e2_weight * exposure.shares.e2)
}
