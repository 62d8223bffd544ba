//! On-disk record formats: postings (JSONL in), annotations (JSONL),
//! posting exposure (CSV).

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::annotate::{AnnotatedPosting, PostingInput};
use crate::exposure::{
    exposure_from_parts, ExposureError, ExposureLabel, IndexChoice, PostingExposure, SkillKind,
    SkillMatch, TaskAnnotation,
};
use crate::panel::{CellKey, Seniority};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl DataError {
    fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn record(path: &Path, line: usize, message: impl ToString) -> Self {
        DataError::Record {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        }
    }
}

/// Accept any of the seniority spellings; blank means Intermediate.
pub(crate) fn lenient_seniority<'de, D: Deserializer<'de>>(d: D) -> Result<Seniority, D::Error> {
    let s = Option::<String>::deserialize(d)?.unwrap_or_default();
    s.parse().map_err(serde::de::Error::custom)
}

fn one() -> f64 {
    1.0
}

/// Cell, date and covariate metadata carried alongside each posting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostingMeta {
    #[serde(default)]
    pub occupation: String,
    #[serde(default, deserialize_with = "lenient_seniority")]
    pub seniority: Seniority,
    #[serde(default)]
    pub industry: String,
    #[serde(default)]
    pub date: Option<NaiveDate>,
    #[serde(default)]
    pub state: String,
    #[serde(default)]
    pub remote: String,
    #[serde(default)]
    pub internship: String,
    #[serde(default)]
    pub employment_type: String,
    #[serde(default = "one")]
    pub weight: f64,
}

impl Default for PostingMeta {
    fn default() -> Self {
        PostingMeta {
            occupation: String::new(),
            seniority: Seniority::Intermediate,
            industry: String::new(),
            date: None,
            state: String::new(),
            remote: String::new(),
            internship: String::new(),
            employment_type: String::new(),
            weight: 1.0,
        }
    }
}

/// One line of a postings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostingRecord {
    #[serde(flatten)]
    pub input: PostingInput,
    #[serde(flatten)]
    pub meta: PostingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub text: String,
    pub skill_group_id: String,
    pub kind: SkillKind,
    pub raw_weight: u32,
    pub label: ExposureLabel,
}

/// One line of an annotations file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub posting_id: String,
    pub tasks: Vec<AnnotationTask>,
}

impl AnnotationRecord {
    pub fn from_tasks(posting_id: impl Into<String>, tasks: &[TaskAnnotation]) -> Self {
        AnnotationRecord {
            posting_id: posting_id.into(),
            tasks: tasks
                .iter()
                .map(|t| AnnotationTask {
                    task_id: t.task_id.clone(),
                    text: t.text.clone(),
                    skill_group_id: t.skill.group_id.clone(),
                    kind: t.skill.kind,
                    raw_weight: t.raw_weight(),
                    label: t.label,
                })
                .collect(),
        }
    }

    /// Rebuild task annotations, rejecting records whose kind or weight
    /// disagree with the group id.
    pub fn to_tasks(&self) -> Result<Vec<TaskAnnotation>, String> {
        if self.tasks.is_empty() {
            return Err(ExposureError::EmptyTaskList.to_string());
        }
        self.tasks
            .iter()
            .map(|t| {
                let skill = SkillMatch::new(t.skill_group_id.clone())
                    .map_err(|e| format!("task {}: {e}", t.task_id))?;
                if skill.kind != t.kind {
                    return Err(format!(
                        "task {}: kind {:?} does not match group {}",
                        t.task_id, t.kind, t.skill_group_id
                    ));
                }
                if skill.kind.raw_weight() != t.raw_weight {
                    return Err(format!(
                        "task {}: raw_weight {} should be {} for {:?}",
                        t.task_id,
                        t.raw_weight,
                        skill.kind.raw_weight(),
                        t.kind
                    ));
                }
                Ok(TaskAnnotation {
                    task_id: t.task_id.clone(),
                    text: t.text.clone(),
                    skill,
                    label: t.label,
                })
            })
            .collect()
    }
}

impl From<&AnnotatedPosting> for AnnotationRecord {
    fn from(a: &AnnotatedPosting) -> Self {
        AnnotationRecord::from_tasks(a.posting_id.clone(), &a.tasks)
    }
}

/// One row of the posting-exposure table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureRow {
    pub posting_id: String,
    pub date: Option<NaiveDate>,
    pub occupation: String,
    #[serde(deserialize_with = "lenient_seniority")]
    pub seniority: Seniority,
    pub industry: String,
    pub state: String,
    pub remote: String,
    pub internship: String,
    pub employment_type: String,
    pub weight: f64,
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n_tasks: usize,
}

impl ExposureRow {
    pub fn new(meta: &PostingMeta, exposure: &PostingExposure) -> Self {
        ExposureRow {
            posting_id: exposure.posting_id.clone(),
            date: meta.date,
            occupation: meta.occupation.clone(),
            seniority: meta.seniority,
            industry: meta.industry.clone(),
            state: meta.state.clone(),
            remote: meta.remote.clone(),
            internship: meta.internship.clone(),
            employment_type: meta.employment_type.clone(),
            weight: meta.weight,
            e0: exposure.shares.e0,
            e1: exposure.shares.e1,
            e2: exposure.shares.e2,
            alpha: exposure.alpha,
            beta: exposure.beta,
            gamma: exposure.gamma,
            n_tasks: exposure.n_tasks,
        }
    }

    /// Convenience for generators that already hold (raw weight, label) pairs.
    pub fn from_parts(
        posting_id: &str,
        meta: &PostingMeta,
        parts: &[(u32, ExposureLabel)],
    ) -> Result<Self, ExposureError> {
        Ok(Self::new(meta, &exposure_from_parts(posting_id, parts)?))
    }

    pub fn exposure(&self) -> PostingExposure {
        PostingExposure {
            posting_id: self.posting_id.clone(),
            shares: crate::exposure::LabelShares {
                e0: self.e0,
                e1: self.e1,
                e2: self.e2,
            },
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            n_tasks: self.n_tasks,
        }
    }

    pub fn index(&self, choice: IndexChoice) -> f64 {
        match choice {
            IndexChoice::Alpha => self.alpha,
            IndexChoice::Beta => self.beta,
            IndexChoice::Gamma => self.gamma,
            IndexChoice::Custom(w) => self.e1 + w * self.e2,
        }
    }

    pub fn cell(&self) -> CellKey {
        CellKey::new(&self.occupation, self.seniority, &self.industry)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| DataError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| DataError::io(path, e))
}

/// Read a JSONL file, skipping blank lines, naming the line on parse errors.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::record(path, i + 1, e))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| DataError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_postings(path: &Path) -> Result<Vec<PostingRecord>, DataError> {
    let records: Vec<PostingRecord> = read_jsonl(path)?;
    for (i, r) in records.iter().enumerate() {
        if r.input.posting_id.is_empty() {
            return Err(DataError::record(path, i + 1, "posting_id is empty"));
        }
        if !(r.meta.weight.is_finite() && r.meta.weight > 0.0) {
            return Err(DataError::record(path, i + 1, "weight must be positive"));
        }
    }
    Ok(records)
}

/// Read annotations and check every record against the weighting rules.
pub fn read_annotations(
    path: &Path,
) -> Result<Vec<(AnnotationRecord, Vec<TaskAnnotation>)>, DataError> {
    let mut out = Vec::new();
    let reader = open(path)?;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(&line).map_err(|e| DataError::record(path, i + 1, e))?;
        let tasks = rec
            .to_tasks()
            .map_err(|e| DataError::record(path, i + 1, e))?;
        out.push((rec, tasks));
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row)
            .map_err(|e| DataError::io(path, io::Error::other(e)))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        // Header is line 1.
        out.push(row.map_err(|e| DataError::record(path, i + 2, e))?);
    }
    Ok(out)
}

pub fn read_exposure(path: &Path) -> Result<Vec<ExposureRow>, DataError> {
    let rows: Vec<ExposureRow> = read_csv(path)?;
    for (i, r) in rows.iter().enumerate() {
        let sum = r.e0 + r.e1 + r.e2;
        if (sum - 1.0).abs() > 1e-9 || !(0.0..=1.0).contains(&r.beta) {
            return Err(DataError::record(
                path,
                i + 2,
                "shares must sum to 1 and indices lie in [0,1]",
            ));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posting_line_with_partial_metadata() {
        let line = r#"{"posting_id":"x1","title":"Nurse","body":"Care.","occupation":"29-1141.00","industry":"622110","date":"2023-04-02"}"#;
        let rec: PostingRecord = serde_json::from_str(line).unwrap();
        assert_eq!(rec.input.posting_id, "x1");
        assert_eq!(rec.meta.seniority, Seniority::Intermediate);
        assert_eq!(rec.meta.weight, 1.0);
        assert_eq!(rec.meta.date, NaiveDate::from_ymd_opt(2023, 4, 2));
        let back: PostingRecord =
            serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn annotation_record_checks_weights() {
        let line = r#"{"posting_id":"a","tasks":[{"task_id":"t1","text":"x","skill_group_id":"S1","kind":"Specialized","raw_weight":1,"label":"E1"}]}"#;
        let rec: AnnotationRecord = serde_json::from_str(line).unwrap();
        assert!(rec
            .to_tasks()
            .unwrap_err()
            .contains("raw_weight 1 should be 2"));
        let line = line.replace("\"raw_weight\":1", "\"raw_weight\":2");
        let rec: AnnotationRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(rec.to_tasks().unwrap()[0].raw_weight(), 2);
        let mismatch = line.replace("\"S1\"", "\"C1\"");
        let rec: AnnotationRecord = serde_json::from_str(&mismatch).unwrap();
        assert!(rec.to_tasks().is_err());
    }

    #[test]
    fn exposure_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exposure.csv");
        let meta = PostingMeta {
            occupation: "15-1252.00".into(),
            seniority: Seniority::Senior,
            industry: "51".into(),
            date: NaiveDate::from_ymd_opt(2022, 1, 5),
            ..PostingMeta::default()
        };
        let parts = [
            (2, ExposureLabel::E1),
            (1, ExposureLabel::E2),
            (1, ExposureLabel::E0),
        ];
        let row = ExposureRow::from_parts("p", &meta, &parts).unwrap();
        write_csv(&path, std::slice::from_ref(&row)).unwrap();
        let back = read_exposure(&path).unwrap();
        assert_eq!(back, vec![row]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("posting_id,date,occupation,seniority,industry,state,remote,internship,employment_type,weight,e0,e1,e2,alpha,beta,gamma,n_tasks\n"));
    }

    #[test]
    fn bad_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(&path, "{\"posting_id\":\"a\"}\n\n{oops}\n").unwrap();
        let err = read_postings(&path).unwrap_err();
        assert!(err.to_string().contains("p.jsonl:3:"), "{err}");
    }
}
