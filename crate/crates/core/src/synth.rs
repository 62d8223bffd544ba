//! Synthetic labor markets with known dynamics, and slow reference
//! implementations used to check the engines.
//!
//! The oracles here share no code with `kitagawa` or `oaxaca`: they
//! enumerate postings or rows into ordered maps and evaluate the formulas
//! term by term with plain summation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::exposure::{ExposureLabel, IndexChoice};
use crate::oaxaca::{CovariateBlocks, ObCell, ObGroup};
use crate::panel::{CellPanel, PanelRow, PanelSpec, PeriodId, PeriodKind, Seniority};
use crate::records::{ExposureRow, PostingMeta};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("infeasible scenario: {0}")]
    InfeasibleSpec(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
}

const SECTORS: [&str; 20] = [
    "11", "21", "22", "23", "31", "42", "44", "48", "51", "52", "53", "54", "55", "56", "61", "62",
    "71", "72", "81", "92",
];
const STATES: [&str; 10] = ["CA", "TX", "NY", "FL", "IL", "PA", "OH", "GA", "WA", "MA"];
const REMOTE: [&str; 3] = ["NotRemote", "Hybrid", "Remote"];
const EMPLOYMENT: [&str; 3] = ["FullTime", "PartTime", "PartFull"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dynamics {
    None,
    /// Shares and exposures move linearly in time.
    LinearDrift,
    /// Shares and exposures jump at the given period and stay.
    StepAt(PeriodId),
    /// Only sector sizes change; mixes and exposures inside sectors are fixed.
    PureCrossSector,
    /// Only cell exposures change.
    PureRedesign,
    /// Only cell shares change.
    PureReallocation,
}

impl fmt::Display for Dynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dynamics::None => f.write_str("none"),
            Dynamics::LinearDrift => f.write_str("linear"),
            Dynamics::StepAt(p) => write!(f, "step:{p}"),
            Dynamics::PureCrossSector => f.write_str("cross_sector"),
            Dynamics::PureRedesign => f.write_str("redesign"),
            Dynamics::PureReallocation => f.write_str("reallocation"),
        }
    }
}

impl FromStr for Dynamics {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "none" => Dynamics::None,
            "linear" => Dynamics::LinearDrift,
            "cross_sector" => Dynamics::PureCrossSector,
            "redesign" => Dynamics::PureRedesign,
            "reallocation" => Dynamics::PureReallocation,
            other => match other.strip_prefix("step:") {
                Some(p) => Dynamics::StepAt(p.parse().map_err(|e| format!("{e}"))?),
                None => return Err(format!("unknown dynamics {other:?}")),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub sectors: usize,
    pub occupations_per_sector: usize,
    /// 1 to 3; the first `n` of Junior, Intermediate, Senior.
    pub seniorities: usize,
    pub baseline_year: i32,
    pub start: PeriodId,
    pub quarters: usize,
    pub dynamics: Dynamics,
    /// Size of the end-of-window change in log-shares and exposure levels.
    pub drift: f64,
    /// Bounded jitter applied to the moving margins each period.
    pub noise: f64,
    /// Probability that a cell has no postings in a non-baseline period.
    pub churn: f64,
    pub postings_per_period: usize,
    /// Range of baseline cell exposures.
    pub exposure_low: f64,
    pub exposure_high: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 1,
            sectors: 4,
            occupations_per_sector: 6,
            seniorities: 3,
            baseline_year: 2021,
            start: PeriodId::quarter(2022, 1),
            quarters: 12,
            dynamics: Dynamics::LinearDrift,
            drift: 0.1,
            noise: 0.0,
            churn: 0.0,
            postings_per_period: 2000,
            exposure_low: 0.1,
            exposure_high: 0.8,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InfeasibleSpec(m.to_string()));
        if self.sectors == 0 || self.sectors > SECTORS.len() {
            return bad("sectors must be between 1 and 20");
        }
        if self.occupations_per_sector == 0 {
            return bad("need at least one occupation per sector");
        }
        if !(1..=3).contains(&self.seniorities) {
            return bad("seniorities must be 1, 2 or 3");
        }
        if self.quarters == 0 || self.postings_per_period == 0 {
            return bad("need at least one quarter and one posting per period");
        }
        if self.start.kind != PeriodKind::Quarter || self.start.year <= self.baseline_year {
            return bad("start must be a quarter after the baseline year");
        }
        if !(0.0 <= self.exposure_low
            && self.exposure_low <= self.exposure_high
            && self.exposure_high <= 1.0)
        {
            return bad("exposure range must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.churn) || self.noise < 0.0 || !self.drift.is_finite() {
            return bad("churn must be in [0, 1), noise nonnegative, drift finite");
        }
        Ok(())
    }

    /// Baseline year followed by the quarter grid.
    pub fn periods(&self) -> Vec<PeriodId> {
        let mut out = vec![PeriodId::year(self.baseline_year)];
        let mut q = self.start;
        for _ in 0..self.quarters {
            out.push(q);
            q = q.succ();
        }
        out
    }

    pub fn panel_spec(&self) -> PanelSpec {
        PanelSpec {
            kind: PeriodKind::Quarter,
            baseline: Some(PeriodId::year(self.baseline_year)),
            periods: None,
        }
    }

    /// Parse `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse_config(text: &str) -> Result<Self, SynthError> {
        let mut spec = ScenarioSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SynthError::Config {
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|e| err(format!("{k}: {e}")));
            let int = |v: &str| v.parse::<usize>().map_err(|e| err(format!("{k}: {e}")));
            match k {
                "seed" => spec.seed = v.parse().map_err(|e| err(format!("seed: {e}")))?,
                "sectors" => spec.sectors = int(v)?,
                "occupations_per_sector" => spec.occupations_per_sector = int(v)?,
                "seniorities" => spec.seniorities = int(v)?,
                "baseline_year" => {
                    spec.baseline_year = v.parse().map_err(|e| err(format!("{k}: {e}")))?
                }
                "start" => spec.start = v.parse().map_err(|e| err(format!("{k}: {e}")))?,
                "quarters" => spec.quarters = int(v)?,
                "dynamics" => spec.dynamics = v.parse().map_err(err)?,
                "drift" => spec.drift = num(v)?,
                "noise" => spec.noise = num(v)?,
                "churn" => spec.churn = num(v)?,
                "postings_per_period" => spec.postings_per_period = int(v)?,
                "exposure_low" => spec.exposure_low = num(v)?,
                "exposure_high" => spec.exposure_high = num(v)?,
                _ => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// A generated posting: metadata plus its (raw weight, label) task list.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPosting {
    pub posting_id: String,
    pub meta: PostingMeta,
    pub tasks: Vec<(u32, ExposureLabel)>,
}

impl SynthPosting {
    pub fn to_row(&self) -> ExposureRow {
        ExposureRow::from_parts(&self.posting_id, &self.meta, &self.tasks)
            .expect("generated postings have tasks")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub periods: Vec<PeriodId>,
    /// `(occupation, seniority, sector)` per cell, in cell order.
    pub cells: Vec<(String, Seniority, String)>,
    /// `shares[p][c]`, zero where a cell is absent.
    pub shares: Vec<Vec<f64>>,
    pub exposures: Vec<Vec<f64>>,
}

impl Scenario {
    /// Ground-truth panel: expected shares and exposures, no sampling noise.
    pub fn truth_panel(&self) -> CellPanel {
        let n = self.spec.postings_per_period as f64;
        let mut rows = Vec::new();
        for (p, period) in self.periods.iter().enumerate() {
            for (c, (occ, sen, sector)) in self.cells.iter().enumerate() {
                let share = self.shares[p][c];
                if share > 0.0 {
                    rows.push(PanelRow {
                        occupation: occ.clone(),
                        seniority: *sen,
                        industry: sector.clone(),
                        period: *period,
                        count: (share * n).round() as u64,
                        share,
                        mean_exposure: self.exposures[p][c],
                    });
                }
            }
        }
        CellPanel::from_rows(&rows).expect("scenario shares are normalized")
    }

    /// Draw postings for every period. Each period uses its own stream, so
    /// generation parallelizes without changing the output.
    pub fn postings(&self) -> Vec<SynthPosting> {
        self.periods
            .par_iter()
            .enumerate()
            .map(|(p, period)| self.period_postings(p, *period))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }

    /// Same stream as [`Scenario::postings`], converted to exposure rows
    /// one period at a time.
    pub fn exposure_rows(&self) -> Vec<ExposureRow> {
        self.periods
            .par_iter()
            .enumerate()
            .flat_map_iter(|(p, period)| {
                self.period_postings(p, *period)
                    .into_iter()
                    .map(|s| s.to_row())
            })
            .collect()
    }

    fn period_postings(&self, p: usize, period: PeriodId) -> Vec<SynthPosting> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(p as u64 + 1)),
        );
        let cumulative: Vec<f64> = self.shares[p]
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect();
        let total = *cumulative.last().expect("at least one cell");
        let start = period.start();
        let days = (period_end(period) - start).num_days();
        (0..self.spec.postings_per_period)
            .map(|i| {
                let u = rng.random::<f64>() * total;
                let c = cumulative
                    .partition_point(|&x| x <= u)
                    .min(cumulative.len() - 1);
                let (occ, sen, sector) = &self.cells[c];
                let m = self.exposures[p][c];
                let n_tasks = rng.random_range(3..=10);
                let tasks = (0..n_tasks)
                    .map(|_| {
                        (
                            if rng.random::<f64>() < 0.7 { 2 } else { 1 },
                            draw_label(&mut rng, m),
                        )
                    })
                    .collect();
                let meta = PostingMeta {
                    occupation: occ.clone(),
                    seniority: *sen,
                    industry: format!("{sector}{:04}", rng.random_range(0..10_000)),
                    date: Some(start + Duration::days(rng.random_range(0..days))),
                    state: STATES[rng.random_range(0..STATES.len())].to_string(),
                    remote: REMOTE[rng.random_range(0..REMOTE.len())].to_string(),
                    internship: if rng.random::<f64>() < 0.05 {
                        "Intern"
                    } else {
                        "NonIntern"
                    }
                    .to_string(),
                    employment_type: EMPLOYMENT[rng.random_range(0..EMPLOYMENT.len())].to_string(),
                    weight: 1.0,
                };
                SynthPosting {
                    posting_id: format!("s{}-{period}-{i:07}", self.spec.seed),
                    meta,
                    tasks,
                }
            })
            .collect()
    }
}

fn period_end(p: PeriodId) -> NaiveDate {
    match p.kind {
        PeriodKind::Year => NaiveDate::from_ymd_opt(p.year + 1, 1, 1).expect("valid date"),
        _ => p.succ().start(),
    }
}

/// Task label with expected index value `m` (E1 counts 1, E2 counts 0.5),
/// putting as much mass on E2 as possible to keep variance low.
fn draw_label(rng: &mut ChaCha8Rng, m: f64) -> ExposureLabel {
    let u = rng.random::<f64>();
    if m <= 0.5 {
        if u < 2.0 * m {
            ExposureLabel::E2
        } else {
            ExposureLabel::E0
        }
    } else if u < 2.0 * (1.0 - m) {
        ExposureLabel::E2
    } else {
        ExposureLabel::E1
    }
}

/// Build the ground-truth share and exposure paths for a spec.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let periods = spec.periods();
    let sectors = &SECTORS[..spec.sectors];
    let mut cells = Vec::new();
    for sector in sectors {
        for o in 0..spec.occupations_per_sector {
            for sen in &Seniority::ALL[..spec.seniorities] {
                cells.push((
                    format!("{}-{:04}.00", 11 + 2 * (o % 40), 1000 + 37 * o),
                    *sen,
                    sector.to_string(),
                ));
            }
        }
    }
    let n = cells.len();
    let base_w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let base_e: Vec<f64> = (0..n)
        .map(|_| rng.random_range(spec.exposure_low..=spec.exposure_high))
        .collect();
    let share_dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let exp_dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sector_dir: Vec<f64> = (0..sectors.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let per_sector = spec.occupations_per_sector * spec.seniorities;

    let (mut shares, mut exposures) = (Vec::new(), Vec::new());
    for (p, period) in periods.iter().enumerate() {
        let tau = match spec.dynamics {
            _ if p == 0 => 0.0,
            Dynamics::StepAt(at) => f64::from(u8::from(*period >= at)),
            _ => p as f64 / spec.quarters as f64,
        };
        let (moves_w, moves_e) = match spec.dynamics {
            Dynamics::None => (false, false),
            Dynamics::LinearDrift | Dynamics::StepAt(_) => (true, true),
            Dynamics::PureCrossSector | Dynamics::PureReallocation => (true, false),
            Dynamics::PureRedesign => (false, true),
        };
        let mut w: Vec<f64> = (0..n)
            .map(|c| {
                let dir = match spec.dynamics {
                    Dynamics::PureCrossSector => sector_dir[c / per_sector],
                    _ => share_dir[c],
                };
                let jitter = if moves_w && p > 0 {
                    spec.noise * rng.random_range(-1.0..1.0)
                } else {
                    0.0
                };
                if moves_w {
                    base_w[c] * (spec.drift * tau * dir + jitter).exp()
                } else {
                    base_w[c]
                }
            })
            .collect();
        let e: Vec<f64> = (0..n)
            .map(|c| {
                let jitter = if moves_e && p > 0 {
                    spec.noise * rng.random_range(-1.0..1.0)
                } else {
                    0.0
                };
                if moves_e {
                    (base_e[c] + spec.drift * tau * exp_dir[c] + jitter).clamp(0.0, 1.0)
                } else {
                    base_e[c]
                }
            })
            .collect();
        if p > 0 && spec.churn > 0.0 {
            let keep = rng.random_range(0..n);
            for (c, wc) in w.iter_mut().enumerate() {
                if c != keep && rng.random::<f64>() < spec.churn {
                    *wc = 0.0;
                }
            }
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(SynthError::InfeasibleSpec(format!(
                "all shares zero in {period}"
            )));
        }
        shares.push(w.iter().map(|x| x / total).collect());
        exposures.push(e);
    }
    Ok(Scenario {
        spec: spec.clone(),
        periods,
        cells,
        shares,
        exposures,
    })
}

/// Randomized panel rows for identity checks: `n_cells` cells over the
/// baseline year plus `n_quarters` quarters, each cell dropped from a
/// non-baseline period with probability `churn`.
pub fn random_panel_rows(
    seed: u64,
    n_cells: usize,
    n_quarters: usize,
    churn: f64,
) -> Vec<PanelRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut periods = vec![PeriodId::year(2021)];
    let mut q = PeriodId::quarter(2022, 1);
    for _ in 0..n_quarters {
        periods.push(q);
        q = q.succ();
    }
    let mut rows = Vec::new();
    for (p, period) in periods.iter().enumerate() {
        let present: Vec<usize> = (0..n_cells)
            .filter(|&c| p == 0 || c == 0 || rng.random::<f64>() >= churn)
            .collect();
        let w: Vec<f64> = present
            .iter()
            .map(|_| rng.random_range(0.001..1.0))
            .collect();
        let total: f64 = w.iter().sum();
        for (&c, wc) in present.iter().zip(&w) {
            rows.push(PanelRow {
                occupation: format!("{:02}-{:04}.00", 11 + c % 30, c),
                seniority: Seniority::ALL[c % 3],
                industry: SECTORS[c % 7].to_string(),
                period: *period,
                count: rng.random_range(1..500),
                share: wc / total,
                mean_exposure: rng.random::<f64>(),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleDecomp {
    pub total: f64,
    pub composition: f64,
    pub within: f64,
    pub interaction: f64,
    pub m_cur: f64,
    pub m_base: f64,
    pub raw_total: f64,
}

type Key = (String, String, String);

/// Three-fold decomposition on common support from `(key, share, mean)`
/// maps, evaluated with naive left-to-right sums.
fn oracle_from_maps(
    base: &BTreeMap<Key, (f64, f64)>,
    cur: &BTreeMap<Key, (f64, f64)>,
) -> OracleDecomp {
    let raw_base: f64 = base.values().map(|(w, e)| w * e).sum();
    let raw_cur: f64 = cur.values().map(|(w, e)| w * e).sum();
    let support: Vec<&Key> = base.keys().filter(|k| cur.contains_key(*k)).collect();
    let m_base: f64 = support.iter().map(|k| base[*k].0).sum();
    let m_cur: f64 = support.iter().map(|k| cur[*k].0).sum();
    let (mut total, mut c, mut w, mut i) = (0.0, 0.0, 0.0, 0.0);
    let (mut lvl0, mut lvl1) = (0.0, 0.0);
    for k in support {
        let (w0, e0) = (base[k].0 / m_base, base[k].1);
        let (w1, e1) = (cur[k].0 / m_cur, cur[k].1);
        c += (w1 - w0) * e0;
        w += w0 * (e1 - e0);
        i += (w1 - w0) * (e1 - e0);
        lvl0 += w0 * e0;
        lvl1 += w1 * e1;
    }
    total += lvl1 - lvl0;
    OracleDecomp {
        total,
        composition: c,
        within: w,
        interaction: i,
        m_cur,
        m_base,
        raw_total: raw_cur - raw_base,
    }
}

/// Reference decomposition straight from postings: enumerate postings into
/// cells, form shares and unweighted means, then apply the three-fold formula.
pub fn oracle_decompose(
    rows: &[ExposureRow],
    spec: &PanelSpec,
    index: IndexChoice,
    base: PeriodId,
    t: PeriodId,
) -> OracleDecomp {
    let cells_of = |p: PeriodId| {
        let mut acc: BTreeMap<Key, (f64, f64, f64)> = BTreeMap::new();
        let mut total_w = 0.0;
        for r in rows {
            if spec.assign(r.date.expect("dated posting")) != p {
                continue;
            }
            let sector: String = r.industry.chars().take(2).collect();
            let a = acc
                .entry((r.occupation.clone(), r.seniority.to_string(), sector))
                .or_default();
            a.0 += 1.0;
            a.1 += r.weight;
            a.2 += r.index(index);
            total_w += r.weight;
        }
        acc.into_iter()
            .map(|(k, (n, w, s))| (k, (w / total_w, s / n)))
            .collect::<BTreeMap<_, _>>()
    };
    oracle_from_maps(&cells_of(base), &cells_of(t))
}

/// Reference decomposition from exported panel rows.
pub fn oracle_decompose_rows(rows: &[PanelRow], base: PeriodId, t: PeriodId) -> OracleDecomp {
    let map = |p: PeriodId| {
        rows.iter()
            .filter(|r| r.period == p)
            .map(|r| {
                (
                    (
                        r.occupation.clone(),
                        r.seniority.to_string(),
                        r.industry.clone(),
                    ),
                    (r.share, r.mean_exposure),
                )
            })
            .collect::<BTreeMap<_, _>>()
    };
    oracle_from_maps(&map(base), &map(t))
}

/// Fixed-weight within-sector aggregate from panel rows.
pub fn oracle_within_sector(rows: &[PanelRow], base: PeriodId, t: PeriodId) -> OracleDecomp {
    let sectors: BTreeSet<&str> = rows
        .iter()
        .filter(|r| r.period == base)
        .map(|r| r.industry.as_str())
        .collect();
    let mut agg = OracleDecomp {
        total: 0.0,
        composition: 0.0,
        within: 0.0,
        interaction: 0.0,
        m_cur: 0.0,
        m_base: 0.0,
        raw_total: 0.0,
    };
    for s in sectors {
        let sub: Vec<PanelRow> = rows.iter().filter(|r| r.industry == s).cloned().collect();
        let weight: f64 = sub
            .iter()
            .filter(|r| r.period == base)
            .map(|r| r.share)
            .sum();
        let map = |p: PeriodId| {
            sub.iter()
                .filter(|r| r.period == p)
                .map(|r| {
                    (
                        (
                            r.occupation.clone(),
                            r.seniority.to_string(),
                            r.industry.clone(),
                        ),
                        (r.share, r.mean_exposure),
                    )
                })
                .collect::<BTreeMap<_, _>>()
        };
        let (b, c) = (map(base), map(t));
        if !b.keys().any(|k| c.contains_key(k)) {
            continue;
        }
        let d = oracle_from_maps(&b, &c);
        agg.total += weight * d.total;
        agg.composition += weight * d.composition;
        agg.within += weight * d.within;
        agg.interaction += weight * d.interaction;
    }
    agg
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOb {
    pub mean_a: f64,
    pub mean_b: f64,
    pub explained: f64,
    pub unexplained: f64,
    pub blocks: Vec<f64>,
}

/// Dense normal-equation solve of both group regressions followed by the
/// two-fold split. Assumes each group's design has full column rank.
pub fn oracle_ob(cells: &[ObCell], blocks: &CovariateBlocks) -> OracleOb {
    let mut columns: Vec<(usize, &str)> = Vec::new();
    for (b, block) in blocks.blocks.iter().enumerate() {
        for c in &block.categories {
            if *c != block.reference {
                columns.push((b, c.as_str()));
            }
        }
    }
    let k = columns.len();
    let dense = |g: ObGroup| {
        let sel: Vec<&ObCell> = cells.iter().filter(|c| c.group == g).collect();
        let x = DMatrix::from_fn(sel.len(), k + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                let (b, cat) = columns[j - 1];
                f64::from(u8::from(sel[i].categories[b] == cat))
            }
        });
        let w = DVector::from_iterator(sel.len(), sel.iter().map(|c| c.weight));
        let y = DVector::from_iterator(sel.len(), sel.iter().map(|c| c.outcome));
        (x, w, y)
    };
    let fit = |g: ObGroup| {
        let (x, w, y) = dense(g);
        let xtw = x.transpose() * DMatrix::from_diagonal(&w);
        let beta = (&xtw * &x)
            .lu()
            .solve(&(&xtw * &y))
            .expect("full-rank design");
        let wsum = w.sum();
        let xbar = x.transpose() * &w / wsum;
        let ybar = w.dot(&y) / wsum;
        (beta, xbar, ybar)
    };
    let (ba, xa, ya) = fit(ObGroup::PreGpt);
    let (bb, xb, yb) = fit(ObGroup::PostGpt);
    let mut per_block = vec![0.0; blocks.blocks.len()];
    let mut unexplained = bb[0] - ba[0];
    for j in 1..=k {
        per_block[columns[j - 1].0] += (xb[j] - xa[j]) * ba[j];
        unexplained += xb[j] * (bb[j] - ba[j]);
    }
    OracleOb {
        mean_a: ya,
        mean_b: yb,
        explained: per_block.iter().sum(),
        unexplained,
        blocks: per_block,
    }
}

/// Random OB cell set over `block_sizes` categorical blocks. Every category
/// appears in both groups so each group's design has full rank.
pub fn random_ob_cells(seed: u64, block_sizes: &[usize], cells_per_group: usize) -> Vec<ObCell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let effects: Vec<Vec<f64>> = block_sizes
        .iter()
        .map(|&n| (0..n).map(|_| rng.random_range(-0.1..0.1)).collect())
        .collect();
    let max = block_sizes.iter().copied().max().unwrap_or(1);
    let mut out = Vec::new();
    for (gi, group) in [ObGroup::PreGpt, ObGroup::PostGpt].into_iter().enumerate() {
        let shift = 0.05 * gi as f64;
        for i in 0..cells_per_group.max(max) {
            let cats: Vec<usize> = block_sizes
                .iter()
                .map(|&n| {
                    if i < max {
                        (i + gi) % n
                    } else {
                        rng.random_range(0..n)
                    }
                })
                .collect();
            let mean = 0.4 + shift + cats.iter().zip(&effects).map(|(&c, e)| e[c]).sum::<f64>();
            out.push(ObCell {
                categories: cats
                    .iter()
                    .enumerate()
                    .map(|(b, c)| format!("b{b}c{c}"))
                    .collect(),
                group,
                weight: f64::from(rng.random_range(1..200u32)),
                outcome: (mean + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0),
            });
        }
    }
    out
}
