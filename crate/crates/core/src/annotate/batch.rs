use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::backend::{BackendError, GenerationBackend, GenerationRequest, PromptStage};
use super::prompts::{render_stage1_prompt, render_stage2_prompt};
use super::validate::{validate_stage1, validate_stage2, ValidationFailure};
use super::{PostingInput, Stage1Output};
use crate::exposure::TaskAnnotation;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPolicy {
    pub model: String,
    pub temperature: f64,
    /// Attempts per stage, counting the first one.
    pub max_attempts: u32,
    pub max_in_flight: usize,
}

impl Default for BatchPolicy {
    fn default() -> Self {
        BatchPolicy {
            model: "mock".into(),
            temperature: 0.0,
            max_attempts: 3,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageAttempts {
    pub stage1: u32,
    pub stage2: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPosting {
    pub posting_id: String,
    pub stage1: Stage1Output,
    pub tasks: Vec<TaskAnnotation>,
    pub attempts: StageAttempts,
}

/// One line of the failure sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub posting_id: String,
    pub stage: u8,
    pub error_class: String,
    pub message: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PostingOutcome {
    Annotated(AnnotatedPosting),
    Failed(FailureRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub posting_id: String,
    pub outcome: PostingOutcome,
}

impl BatchRecord {
    pub fn is_success(&self) -> bool {
        matches!(self.outcome, PostingOutcome::Annotated(_))
    }
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("posting at position {0} has an empty id")]
    EmptyPostingId(usize),
    #[error("posting id {0:?} appears more than once in the batch")]
    DuplicatePostingId(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("failure log: {0}")]
    Io(#[from] io::Error),
}

/// Append-only JSONL sink for failed postings, safe to share across workers.
pub struct FailureLog {
    file: Mutex<File>,
}

impl FailureLog {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(FailureLog {
            file: Mutex::new(File::create(path)?),
        })
    }

    pub fn append_to(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(FailureLog {
            file: Mutex::new(file),
        })
    }

    pub fn record(&self, failure: &FailureRecord) -> io::Result<()> {
        let mut line = serde_json::to_string(failure).map_err(io::Error::other)?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())?;
        file.flush()
    }

    pub fn read(path: &Path) -> io::Result<Vec<FailureRecord>> {
        let mut out = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                )
            })?;
            out.push(rec);
        }
        Ok(out)
    }
}

enum StageFailure {
    Exhausted {
        class: String,
        message: String,
        attempts: u32,
    },
    Fatal(String),
}

fn run_stage<T>(
    backend: &dyn GenerationBackend,
    policy: &BatchPolicy,
    stage: PromptStage,
    prompt: String,
    validate: impl Fn(&str) -> Result<T, ValidationFailure>,
) -> Result<(T, u32), StageFailure> {
    let mut request = GenerationRequest::new(stage, prompt, policy.model.clone());
    request.temperature = policy.temperature;
    let max = policy.max_attempts.max(1);
    let mut last = (String::new(), String::new());
    for attempt in 1..=max {
        match backend.generate(&request) {
            Ok(resp) => match validate(&resp.text) {
                Ok(v) => return Ok((v, attempt)),
                Err(f) => last = (f.class().to_string(), f.to_string()),
            },
            Err(BackendError::Transient(m)) => last = ("BackendUnavailable".to_string(), m),
            Err(BackendError::Unavailable(m)) => return Err(StageFailure::Fatal(m)),
        }
    }
    Err(StageFailure::Exhausted {
        class: last.0,
        message: last.1,
        attempts: max,
    })
}

fn annotate_one(
    input: &PostingInput,
    backend: &dyn GenerationBackend,
    policy: &BatchPolicy,
) -> Result<PostingOutcome, String> {
    let fail = |stage: u8, class: String, message: String, attempts: u32| {
        PostingOutcome::Failed(FailureRecord {
            posting_id: input.posting_id.clone(),
            stage,
            error_class: class,
            message,
            attempts,
        })
    };
    let (s1, a1) = match run_stage(
        backend,
        policy,
        PromptStage::Stage1,
        render_stage1_prompt(input),
        |raw| validate_stage1(raw, input),
    ) {
        Ok(v) => v,
        Err(StageFailure::Fatal(m)) => return Err(m),
        Err(StageFailure::Exhausted {
            class,
            message,
            attempts,
        }) => return Ok(fail(1, class, message, attempts)),
    };
    let prompt2 = render_stage2_prompt(&s1, &input.title);
    let (s2, a2) = match run_stage(backend, policy, PromptStage::Stage2, prompt2, |raw| {
        validate_stage2(raw, &s1)
    }) {
        Ok(v) => v,
        Err(StageFailure::Fatal(m)) => return Err(m),
        Err(StageFailure::Exhausted {
            class,
            message,
            attempts,
        }) => return Ok(fail(2, class, message, attempts)),
    };
    let tasks = s2.annotations(&s1);
    Ok(PostingOutcome::Annotated(AnnotatedPosting {
        posting_id: input.posting_id.clone(),
        stage1: s1,
        tasks,
        attempts: StageAttempts {
            stage1: a1,
            stage2: a2,
        },
    }))
}

/// Annotate every posting, one record per input in input order.
///
/// A posting that keeps failing validation or keeps hitting transient
/// backend errors becomes a failure record; a non-retryable backend error
/// stops the whole batch.
pub fn annotate_batch(
    inputs: &[PostingInput],
    backend: &dyn GenerationBackend,
    policy: &BatchPolicy,
    failure_log: Option<&FailureLog>,
) -> Result<Vec<BatchRecord>, AnnotateError> {
    let mut seen = HashSet::with_capacity(inputs.len());
    for (i, p) in inputs.iter().enumerate() {
        if p.posting_id.is_empty() {
            return Err(AnnotateError::EmptyPostingId(i));
        }
        if !seen.insert(p.posting_id.as_str()) {
            return Err(AnnotateError::DuplicatePostingId(p.posting_id.clone()));
        }
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let fatal: Mutex<Option<String>> = Mutex::new(None);
    let io_error: Mutex<Option<io::Error>> = Mutex::new(None);
    let workers = policy.max_in_flight.clamp(1, inputs.len().max(1));

    let mut slots: Vec<(usize, PostingOutcome)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    while !stop.load(Ordering::Relaxed) {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(input) = inputs.get(i) else { break };
                        match annotate_one(input, backend, policy) {
                            Ok(outcome) => {
                                if let (PostingOutcome::Failed(f), Some(log)) =
                                    (&outcome, failure_log)
                                {
                                    if let Err(e) = log.record(f) {
                                        stop.store(true, Ordering::Relaxed);
                                        io_error.lock().unwrap().get_or_insert(e);
                                    }
                                }
                                done.push((i, outcome));
                            }
                            Err(m) => {
                                stop.store(true, Ordering::Relaxed);
                                fatal.lock().unwrap().get_or_insert(m);
                            }
                        }
                    }
                    done
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("annotation worker panicked"))
            .collect()
    });

    if let Some(m) = fatal.into_inner().unwrap() {
        return Err(AnnotateError::BackendUnavailable(m));
    }
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e.into());
    }
    slots.sort_by_key(|(i, _)| *i);
    Ok(slots
        .into_iter()
        .map(|(i, outcome)| BatchRecord {
            posting_id: inputs[i].posting_id.clone(),
            outcome,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{GenerationResponse, MockBackend};
    use std::collections::HashMap;
    use std::sync::atomic::AtomicU32;

    fn postings(n: usize) -> Vec<PostingInput> {
        (0..n)
            .map(|i| PostingInput {
                posting_id: format!("p{i:03}"),
                title: format!("Role {i}"),
                body: format!(
                    "Prepare monthly budget report {i}. Audit vendor invoices. Reconcile ledgers."
                ),
                specialized_skills: vec!["Accounting".into()],
                common_skills: if i % 3 == 0 {
                    vec![]
                } else {
                    vec!["Excel".into()]
                },
            })
            .collect()
    }

    /// Mock wrapper that garbles stage-1 replies for selected postings.
    struct Garble(Vec<&'static str>);

    impl GenerationBackend for Garble {
        fn generate(&self, r: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            let mut resp = MockBackend.generate(r)?;
            if r.prompt_template_id == PromptStage::Stage1
                && self.0.iter().any(|id| r.prompt.contains(id))
            {
                resp.text = "not json at all".into();
            }
            Ok(resp)
        }
    }

    /// Fails with a transient error the first `n` times for each prompt.
    struct Flaky {
        n: u32,
        calls: Mutex<HashMap<String, u32>>,
        total: AtomicU32,
    }

    impl GenerationBackend for Flaky {
        fn generate(&self, r: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            self.total.fetch_add(1, Ordering::Relaxed);
            let mut calls = self.calls.lock().unwrap();
            let c = calls.entry(r.prompt.clone()).or_default();
            *c += 1;
            if *c <= self.n {
                return Err(BackendError::Transient("429".into()));
            }
            drop(calls);
            MockBackend.generate(r)
        }
    }

    struct Down;

    impl GenerationBackend for Down {
        fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            Err(BackendError::Unavailable("HTTP 401".into()))
        }
    }

    #[test]
    fn hundred_postings_deterministic() {
        let inputs = postings(100);
        let policy = BatchPolicy {
            max_in_flight: 7,
            ..BatchPolicy::default()
        };
        let a = annotate_batch(&inputs, &MockBackend, &policy, None).unwrap();
        let b = annotate_batch(&inputs, &MockBackend, &BatchPolicy::default(), None).unwrap();
        assert_eq!(a.len(), 100);
        assert!(a.iter().all(BatchRecord::is_success));
        assert_eq!(a, b);
        let order: Vec<&str> = a.iter().map(|r| r.posting_id.as_str()).collect();
        let want: Vec<&str> = inputs.iter().map(|p| p.posting_id.as_str()).collect();
        assert_eq!(order, want);
    }

    #[test]
    fn one_malformed_posting_is_isolated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("failures.jsonl");
        let log = FailureLog::create(&path).unwrap();
        let inputs = postings(100);
        let out = annotate_batch(
            &inputs,
            &Garble(vec!["\"ID\": \"p042\""]),
            &BatchPolicy::default(),
            Some(&log),
        )
        .unwrap();
        assert_eq!(out.iter().filter(|r| r.is_success()).count(), 99);
        let PostingOutcome::Failed(f) = &out[42].outcome else {
            panic!("p042 should fail")
        };
        assert_eq!(
            (f.stage, f.error_class.as_str(), f.attempts),
            (1, "ParseFailure", 3)
        );
        assert_eq!(FailureLog::read(&path).unwrap(), vec![f.clone()]);
    }

    #[test]
    fn retry_accounting() {
        let flaky = Flaky {
            n: 1,
            calls: Mutex::default(),
            total: AtomicU32::new(0),
        };
        let policy = BatchPolicy {
            max_attempts: 2,
            ..BatchPolicy::default()
        };
        let out = annotate_batch(&postings(1), &flaky, &policy, None).unwrap();
        let PostingOutcome::Annotated(a) = &out[0].outcome else {
            panic!("expected success")
        };
        assert_eq!(
            a.attempts,
            StageAttempts {
                stage1: 2,
                stage2: 2
            }
        );
        assert_eq!(flaky.total.load(Ordering::Relaxed), 4);
    }

    #[test]
    fn exhausted_transient_errors_become_failure_records() {
        let flaky = Flaky {
            n: 5,
            calls: Mutex::default(),
            total: AtomicU32::new(0),
        };
        let policy = BatchPolicy {
            max_attempts: 2,
            ..BatchPolicy::default()
        };
        let out = annotate_batch(&postings(3), &flaky, &policy, None).unwrap();
        for r in &out {
            let PostingOutcome::Failed(f) = &r.outcome else {
                panic!("expected failure")
            };
            assert_eq!(
                (f.stage, f.error_class.as_str(), f.attempts),
                (1, "BackendUnavailable", 2)
            );
        }
    }

    #[test]
    fn fatal_backend_error_aborts() {
        let err = annotate_batch(&postings(5), &Down, &BatchPolicy::default(), None).unwrap_err();
        assert!(matches!(err, AnnotateError::BackendUnavailable(_)));
    }

    #[test]
    fn batch_ids_must_be_unique() {
        let mut inputs = postings(3);
        inputs[2].posting_id = "p000".into();
        let err = annotate_batch(&inputs, &MockBackend, &BatchPolicy::default(), None).unwrap_err();
        assert!(matches!(err, AnnotateError::DuplicatePostingId(id) if id == "p000"));
        inputs[2].posting_id.clear();
        assert!(matches!(
            annotate_batch(&inputs, &MockBackend, &BatchPolicy::default(), None),
            Err(AnnotateError::EmptyPostingId(2))
        ));
    }
}
