//! One function per CLI verb. Each returns the process exit code on
//! success and a classified [`Failure`] otherwise.

use std::collections::{HashMap, HashSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Duration;

use aiexposure::annotate::{
    annotate_batch, BatchPolicy, FailureLog, GenerationBackend, HttpBackend, MockBackend,
    PostingOutcome,
};
use aiexposure::exposure::{compute_exposure, ExposureLabel, SkillMatch, TaskAnnotation};
use aiexposure::kitagawa::{
    balanced, by_seniority, counterfactual_paths, relative_contributions, sign_patterns,
    threefold_all, twofold_symmetric, within_sector, Contributions, DecompResult,
};
use aiexposure::oaxaca::{cells_from_postings, ob_twofold, CovariateBlocks, POSTING_BLOCKS};
use aiexposure::panel::{
    build_panel, occupation_terciles, sample_postings, tercile_series, CellPanel, PanelRow,
    PeriodId,
};
use aiexposure::records::{
    read_annotations, read_csv, read_exposure, read_jsonl, read_postings, write_csv, write_jsonl,
    AnnotationRecord, ExposureRow, PostingMeta, PostingRecord,
};
use aiexposure::report::{self, Table};
use aiexposure::synth::{generate, ScenarioSpec};
use anyhow::anyhow;

use crate::config::RunConfig;

/// Error classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Configuration, input or output problem: exit 2.
    Config(anyhow::Error),
    /// The computation itself failed: exit 1.
    Compute(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Compute(_) => 1,
        }
    }
}

pub trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn compute(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn compute(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Compute(e.into()))
    }
}

fn context<T, E: Display>(r: Result<T, E>, what: impl Display) -> Result<T, anyhow::Error> {
    r.map_err(|e| anyhow!("{what}: {e}"))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| anyhow!("creating {}: {e}", cfg.out.display()))
        .config()?;
    Ok(&cfg.out)
}

fn write_table(dir: &Path, name: &str, table: &Table) -> Result<(), Failure> {
    context(table.write(dir, name), format!("writing {name}")).config()?;
    Ok(())
}

fn write_text(path: PathBuf, text: &str) -> Result<(), Failure> {
    context(std::fs::write(&path, text), path.display()).config()
}

pub fn annotate(cfg: &RunConfig, retry_failed: bool) -> Result<i32, Failure> {
    let postings_path = cfg.input("postings", &cfg.postings).config()?;
    let postings = read_postings(&postings_path).config()?;
    let annotations_path = cfg.out.join("annotations.jsonl");
    let failures_path = cfg.out.join("failures.jsonl");

    let (targets, mut kept): (HashSet<String>, Vec<AnnotationRecord>) = if retry_failed {
        if !failures_path.is_file() {
            return Err(Failure::Config(anyhow!(
                "no failure sidecar at {}",
                failures_path.display()
            )));
        }
        let failed = context(FailureLog::read(&failures_path), failures_path.display()).config()?;
        let previous: Vec<AnnotationRecord> = if annotations_path.is_file() {
            read_jsonl(&annotations_path).config()?
        } else {
            Vec::new()
        };
        (failed.into_iter().map(|f| f.posting_id).collect(), previous)
    } else {
        (
            postings
                .iter()
                .map(|p| p.input.posting_id.clone())
                .collect(),
            Vec::new(),
        )
    };
    let inputs: Vec<_> = postings
        .iter()
        .filter(|p| targets.contains(&p.input.posting_id))
        .map(|p| p.input.clone())
        .collect();

    out_dir(cfg)?;
    let log = context(FailureLog::create(&failures_path), failures_path.display()).config()?;
    let policy = BatchPolicy {
        model: cfg.model.clone(),
        temperature: 0.0,
        max_attempts: cfg.max_attempts,
        max_in_flight: cfg.max_in_flight,
    };
    let backend: Box<dyn GenerationBackend> = match &cfg.endpoint {
        Some(url) if cfg.model != "mock" => Box::new(HttpBackend::from_env(
            url.clone(),
            Duration::from_secs(cfg.timeout_secs),
        )),
        _ => Box::new(MockBackend::new()),
    };
    let records = annotate_batch(&inputs, backend.as_ref(), &policy, Some(&log)).compute()?;

    let fresh: Vec<AnnotationRecord> = records
        .iter()
        .filter_map(|r| match &r.outcome {
            PostingOutcome::Annotated(a) => Some(AnnotationRecord::from(a)),
            PostingOutcome::Failed(_) => None,
        })
        .collect();
    let failed = records.len() - fresh.len();
    kept.retain(|r| !targets.contains(&r.posting_id));
    kept.extend(fresh);
    let order: HashMap<&str, usize> = postings
        .iter()
        .enumerate()
        .map(|(i, p)| (p.input.posting_id.as_str(), i))
        .collect();
    kept.sort_by_key(|r| {
        order
            .get(r.posting_id.as_str())
            .copied()
            .unwrap_or(usize::MAX)
    });
    write_jsonl(&annotations_path, &kept).config()?;

    println!(
        "annotated {} of {} attempted postings; {} failed",
        records.len() - failed,
        records.len(),
        failed
    );
    if failed > 0 {
        eprintln!(
            "{failed} postings failed; see {} and rerun with --retry-failed",
            failures_path.display()
        );
        return Ok(1);
    }
    Ok(0)
}

pub fn exposure(cfg: &RunConfig) -> Result<i32, Failure> {
    let ann_path = cfg.input("annotations", &cfg.annotations).config()?;
    let annotations = read_annotations(&ann_path).config()?;
    let meta: HashMap<String, PostingMeta> = match &cfg.postings {
        Some(p) => {
            let p = cfg.input("postings", &Some(p.clone())).config()?;
            read_postings(&p)
                .config()?
                .into_iter()
                .map(|r| (r.input.posting_id, r.meta))
                .collect()
        }
        None => HashMap::new(),
    };
    let mut rows = Vec::with_capacity(annotations.len());
    for (i, (rec, tasks)) in annotations.iter().enumerate() {
        let e = compute_exposure(rec.posting_id.clone(), tasks)
            .map_err(|e| anyhow!("{}:{}: {e}", ann_path.display(), i + 1))
            .config()?;
        let m = match (&cfg.postings, meta.get(&rec.posting_id)) {
            (Some(_), None) => {
                return Err(Failure::Config(anyhow!(
                    "{}:{}: posting {} is not in the postings file",
                    ann_path.display(),
                    i + 1,
                    rec.posting_id
                )))
            }
            (_, m) => m.cloned().unwrap_or_default(),
        };
        rows.push(ExposureRow::new(&m, &e));
    }
    let dir = out_dir(cfg)?;
    write_csv(&dir.join("exposure.csv"), &rows).config()?;
    let mean = rows.iter().map(|r| r.beta).sum::<f64>() / rows.len().max(1) as f64;
    println!("{} postings, mean beta {mean:.4}", rows.len());
    Ok(0)
}

/// Exposure rows from the configured file, sampled if a rate is set.
fn load_rows(cfg: &RunConfig) -> Result<(Vec<ExposureRow>, Option<Table>), Failure> {
    let path = cfg.input("exposure", &cfg.exposure).config()?;
    let rows = read_exposure(&path).config()?;
    let Some(rate) = cfg.sample_rate else {
        return Ok((rows, None));
    };
    let (kept, rep) = sample_postings(&rows, rate, cfg.min_cell_size, cfg.seed).compute()?;
    let mut t = Table::new(&[
        "input_postings",
        "input_groups",
        "dropped_groups",
        "dropped_postings",
        "dropped_fraction",
        "sampled_postings",
    ]);
    t.push(vec![
        rep.input_postings.into(),
        rep.input_groups.into(),
        rep.dropped_groups.into(),
        rep.dropped_postings.into(),
        rep.dropped_fraction.into(),
        rep.sampled_postings.into(),
    ]);
    let mut mask = vec![false; rows.len()];
    for i in kept {
        mask[i] = true;
    }
    let rows = rows
        .into_iter()
        .zip(mask)
        .filter_map(|(r, k)| k.then_some(r))
        .collect();
    Ok((rows, Some(t)))
}

fn load_panel(cfg: &RunConfig) -> Result<CellPanel, Failure> {
    if let Some(p) = &cfg.panel {
        let p = cfg.input("panel", &Some(p.clone())).config()?;
        let rows: Vec<PanelRow> = read_csv(&p).config()?;
        return context(CellPanel::from_rows(&rows), p.display()).config();
    }
    let (rows, _) = load_rows(cfg)?;
    build_panel(&rows, &cfg.panel_spec(), cfg.index).compute()
}

pub fn panel(cfg: &RunConfig) -> Result<i32, Failure> {
    let (rows, sampling) = load_rows(cfg)?;
    let panel = build_panel(&rows, &cfg.panel_spec(), cfg.index).compute()?;
    let dir = out_dir(cfg)?;
    write_csv(&dir.join("panel.csv"), &panel.to_rows()).config()?;
    if let Some(t) = sampling {
        write_table(dir, "sampling", &t)?;
    }
    println!(
        "{} cells over {} periods",
        panel.cells().len(),
        panel.periods().len()
    );
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Variant {
    Threefold,
    Twofold,
    Balanced,
    WithinSector,
    BySeniority,
}

fn bars(results: &[DecompResult]) -> Vec<(String, f64, f64, f64, f64)> {
    results
        .iter()
        .map(|r| {
            (
                r.period.to_string(),
                r.composition,
                r.within,
                r.interaction,
                r.total,
            )
        })
        .collect()
}

fn contributions_row(
    label: &str,
    results: &[DecompResult],
    from: &PeriodId,
) -> Option<(String, Contributions)> {
    relative_contributions(results, from)
        .ok()
        .map(|c| (label.to_string(), c))
}

pub fn decompose(cfg: &RunConfig, variant: Variant) -> Result<i32, Failure> {
    let panel = load_panel(cfg)?;
    let base = cfg
        .baseline
        .or_else(|| panel.periods().first().copied())
        .ok_or_else(|| Failure::Compute(anyhow!("panel has no periods")))?;
    let later: Vec<PeriodId> = panel
        .periods()
        .iter()
        .copied()
        .filter(|p| *p != base)
        .collect();
    let from = cfg.from.or_else(|| later.first().copied()).unwrap_or(base);
    let dir = out_dir(cfg)?;

    let three = threefold_all(&panel, &base, cfg.mode).compute()?;
    for r in &three {
        for w in &r.warnings {
            eprintln!("warning: {}: {w}", r.period);
        }
    }
    let signs = later
        .iter()
        .map(|t| sign_patterns(&panel, &base, t, cfg.mode))
        .collect::<Result<Vec<_>, _>>()
        .compute()?;
    let paths = counterfactual_paths(&panel, &base, &later).compute()?;
    write_table(dir, "sign_patterns", &report::sign_pattern_table(&signs))?;
    write_table(dir, "counterfactual", &report::counterfactual_table(&paths))?;

    let mut contributions: Vec<(String, Contributions)> = contributions_row("all", &three, &from)
        .into_iter()
        .collect();
    match variant {
        Variant::Threefold => {
            write_table(dir, "decomposition", &report::decomposition_table(&three))?;
            write_table(dir, "support", &report::support_table(&three))?;
            write_text(
                dir.join("decomposition.svg"),
                &report::decomposition_svg("Change in mean exposure", &bars(&three)),
            )?;
        }
        Variant::Twofold => {
            let two = later
                .iter()
                .map(|t| twofold_symmetric(&panel, &base, t, cfg.mode))
                .collect::<Result<Vec<_>, _>>()
                .compute()?;
            write_table(dir, "twofold", &report::twofold_table(&two))?;
            let b: Vec<_> = two
                .iter()
                .map(|r| (r.period.to_string(), r.composition, r.within, 0.0, r.total))
                .collect();
            write_text(
                dir.join("twofold.svg"),
                &report::decomposition_svg("Symmetric two-fold change", &b),
            )?;
        }
        Variant::Balanced => {
            let bal = balanced(&panel, &base, &later).compute()?;
            write_table(dir, "balanced", &report::decomposition_table(&bal))?;
            write_table(dir, "balanced_support", &report::support_table(&bal))?;
            write_text(
                dir.join("balanced.svg"),
                &report::decomposition_svg("Balanced-cell change", &bars(&bal)),
            )?;
            contributions.extend(contributions_row("balanced", &bal, &from));
        }
        Variant::WithinSector => {
            let ws = later
                .iter()
                .map(|t| within_sector(&panel, &base, t))
                .collect::<Result<Vec<_>, _>>()
                .compute()?;
            for r in &ws {
                for w in &r.warnings {
                    eprintln!("warning: {}: {w}", r.period);
                }
            }
            write_table(dir, "within_sector", &report::within_sector_table(&ws))?;
            let b: Vec<_> = ws
                .iter()
                .map(|r| {
                    let a = r.aggregate;
                    (
                        r.period.to_string(),
                        a.composition,
                        a.within,
                        a.interaction,
                        a.total,
                    )
                })
                .collect();
            write_text(
                dir.join("within_sector.svg"),
                &report::decomposition_svg("Within-sector change", &b),
            )?;
        }
        Variant::BySeniority => {
            let by = by_seniority(&panel, &base, cfg.mode).compute()?;
            write_table(dir, "by_seniority", &report::by_seniority_table(&by))?;
            for (s, rs) in &by {
                let name = s.as_str().to_lowercase();
                write_text(
                    dir.join(format!("by_seniority_{name}.svg")),
                    &report::decomposition_svg(
                        &format!("Change in mean exposure, {}", s.as_str()),
                        &bars(rs),
                    ),
                )?;
                contributions.extend(contributions_row(s.as_str(), rs, &from));
            }
        }
    }
    write_table(
        dir,
        "contributions",
        &report::contributions_table(&contributions),
    )?;
    for (label, c) in &contributions {
        println!(
            "{label}: from {} over {} periods, composition {:.2}%, within {:.2}%, interaction {:.2}%",
            c.from, c.periods, c.composition, c.within, c.interaction
        );
    }
    Ok(0)
}

pub fn ob(cfg: &RunConfig) -> Result<i32, Failure> {
    let (rows, _) = load_rows(cfg)?;
    let cells = cells_from_postings(&rows, cfg.cut, cfg.index).compute()?;
    let blocks = CovariateBlocks::from_cells(&POSTING_BLOCKS, &cells).compute()?;
    let r = ob_twofold(&cells, &blocks).compute()?;
    let dir = out_dir(cfg)?;
    write_table(dir, "ob_summary", &report::ob_summary_table(&r))?;
    write_table(dir, "ob_blocks", &report::ob_block_table(&r))?;
    write_text(
        dir.join("ob_blocks.svg"),
        &report::ob_svg("Explained component by block", &r),
    )?;
    println!(
        "pre {:.4} post {:.4} gap {:.4}: explained {:.4}, unexplained {:.4}",
        r.mean_a,
        r.mean_b,
        r.gap(),
        r.explained,
        r.unexplained
    );
    Ok(0)
}

pub fn describe(cfg: &RunConfig) -> Result<i32, Failure> {
    let path = cfg.input("exposure", &cfg.exposure).config()?;
    let rows = read_exposure(&path).config()?;
    let spec = cfg.panel_spec();
    let terciles = occupation_terciles(&rows, cfg.index);
    let series = tercile_series(&rows, &spec, cfg.index, &terciles).compute()?;
    let dir = out_dir(cfg)?;
    write_table(dir, "summary", &report::summary_table(&rows))?;
    write_table(dir, "sectors", &report::sector_table(&rows, cfg.index))?;
    write_table(
        dir,
        "top_bottom",
        &report::top_bottom_table(&rows, cfg.index, 10),
    )?;
    write_table(dir, "terciles", &report::tercile_table(&series))?;
    write_table(
        dir,
        "seniority_trends",
        &report::seniority_trend_table(&rows, &spec, cfg.index),
    )?;
    let mut assignment = Table::new(&["occupation", "tercile"]);
    for (occ, t) in &terciles {
        assignment.push(vec![occ.as_str().into(), format!("{t:?}").into()]);
    }
    write_table(dir, "tercile_assignment", &assignment)?;
    println!("{} postings, {} occupations", rows.len(), terciles.len());
    Ok(0)
}

pub fn synth(cfg: &RunConfig, seed: Option<u64>) -> Result<i32, Failure> {
    let mut spec = match &cfg.scenario {
        Some(p) => {
            let p = cfg.input("scenario", &Some(p.clone())).config()?;
            let text = context(std::fs::read_to_string(&p), p.display()).config()?;
            context(ScenarioSpec::parse_config(&text), p.display()).config()?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let scenario = generate(&spec).compute()?;
    let postings = scenario.postings();
    let mut records = Vec::with_capacity(postings.len());
    let mut annotations = Vec::with_capacity(postings.len());
    let mut rows = Vec::with_capacity(postings.len());
    for p in &postings {
        let tasks: Vec<TaskAnnotation> = p
            .tasks
            .iter()
            .enumerate()
            .map(
                |(k, &(w, label)): (usize, &(u32, ExposureLabel))| TaskAnnotation {
                    task_id: format!("t{}", k + 1),
                    text: format!("synthetic task {}", k + 1),
                    skill: SkillMatch::new(if w == 2 { "S1" } else { "C1" })
                        .expect("fixed group ids"),
                    label,
                },
            )
            .collect();
        annotations.push(AnnotationRecord::from_tasks(p.posting_id.clone(), &tasks));
        records.push(PostingRecord {
            input: aiexposure::annotate::PostingInput {
                posting_id: p.posting_id.clone(),
                title: p.meta.occupation.clone(),
                body: String::new(),
                specialized_skills: Vec::new(),
                common_skills: Vec::new(),
            },
            meta: p.meta.clone(),
        });
        rows.push(p.to_row());
    }
    let dir = out_dir(cfg)?;
    write_jsonl(&dir.join("postings.jsonl"), &records).config()?;
    write_jsonl(&dir.join("annotations.jsonl"), &annotations).config()?;
    write_csv(&dir.join("exposure.csv"), &rows).config()?;
    write_csv(
        &dir.join("truth_panel.csv"),
        &scenario.truth_panel().to_rows(),
    )
    .config()?;
    println!(
        "{} postings over {} periods, {} cells, dynamics {}",
        postings.len(),
        scenario.periods.len(),
        scenario.cells.len(),
        spec.dynamics
    );
    Ok(0)
}
