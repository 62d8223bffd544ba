//! Cell-period panel: posting shares and mean exposure per
//! occupation × seniority × industry cell, plus sampling and common support.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exposure::IndexChoice;
use crate::records::{ExposureRow, PostingRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PanelError {
    #[error("period {0} has no postings")]
    EmptyPeriod(PeriodId),
    #[error("no cells observed in both {base} and {t}")]
    EmptySupport { base: PeriodId, t: PeriodId },
    #[error("period {0} is not in the panel")]
    MissingPeriod(PeriodId),
    #[error("posting {0} has no date")]
    MissingDate(String),
    #[error("invalid period {0:?}")]
    InvalidPeriod(String),
    #[error("invalid seniority {0:?}")]
    InvalidSeniority(String),
    #[error("shares in period {period} sum to {sum}, not 1")]
    SharesDoNotSum { period: PeriodId, sum: f64 },
    #[error("invalid panel row: {0}")]
    InvalidRow(String),
    #[error("sampling rate {0} is outside (0, 1]")]
    InvalidRate(f64),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub enum Seniority {
    Junior,
    #[default]
    Intermediate,
    Senior,
}

impl Seniority {
    pub const ALL: [Seniority; 3] = [
        Seniority::Junior,
        Seniority::Intermediate,
        Seniority::Senior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Seniority::Junior => "Junior",
            Seniority::Intermediate => "Intermediate",
            Seniority::Senior => "Senior",
        }
    }
}

impl fmt::Display for Seniority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Seniority {
    type Err = PanelError;

    /// Blank input means the posting carried no seniority language.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "junior" => Ok(Seniority::Junior),
            "" | "intermediate" => Ok(Seniority::Intermediate),
            "senior" => Ok(Seniority::Senior),
            _ => Err(PanelError::InvalidSeniority(s.to_string())),
        }
    }
}

/// Keep the two leading characters of an industry code.
pub fn sector_code(industry: &str) -> &str {
    match industry.char_indices().nth(2) {
        Some((i, _)) => &industry[..i],
        None => industry,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub occupation: String,
    pub seniority: Seniority,
    pub industry: String,
}

impl CellKey {
    pub fn new(occupation: &str, seniority: Seniority, industry: &str) -> Self {
        CellKey {
            occupation: occupation.to_string(),
            seniority,
            industry: sector_code(industry).to_string(),
        }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.occupation, self.seniority, self.industry
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PeriodKind {
    Quarter,
    HalfYear,
    Year,
}

impl FromStr for PeriodKind {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "quarter" | "q" => Ok(PeriodKind::Quarter),
            "half-year" | "halfyear" | "half" | "h" => Ok(PeriodKind::HalfYear),
            "year" | "y" => Ok(PeriodKind::Year),
            _ => Err(PanelError::InvalidPeriod(s.to_string())),
        }
    }
}

impl PeriodKind {
    fn months(self) -> u32 {
        match self {
            PeriodKind::Quarter => 3,
            PeriodKind::HalfYear => 6,
            PeriodKind::Year => 12,
        }
    }
}

/// A calendar quarter, half-year or year. Displays as `2023Q3`, `2023H1`, `2021`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PeriodId {
    pub kind: PeriodKind,
    pub year: i32,
    pub index: u8,
}

impl PeriodId {
    pub fn new(kind: PeriodKind, year: i32, index: u8) -> Result<Self, PanelError> {
        let max = (12 / kind.months()) as u8;
        if index == 0 || index > max {
            return Err(PanelError::InvalidPeriod(format!(
                "{kind:?} {year} #{index}"
            )));
        }
        Ok(PeriodId { kind, year, index })
    }

    pub fn quarter(year: i32, q: u8) -> Self {
        Self::new(PeriodKind::Quarter, year, q).expect("quarter index in 1..=4")
    }

    pub fn half(year: i32, h: u8) -> Self {
        Self::new(PeriodKind::HalfYear, year, h).expect("half-year index in 1..=2")
    }

    pub fn year(year: i32) -> Self {
        PeriodId {
            kind: PeriodKind::Year,
            year,
            index: 1,
        }
    }

    pub fn of(kind: PeriodKind, date: NaiveDate) -> Self {
        let index = ((date.month0() / kind.months()) + 1) as u8;
        PeriodId {
            kind,
            year: date.year(),
            index,
        }
    }

    fn start_month(&self) -> u32 {
        (u32::from(self.index) - 1) * self.kind.months() + 1
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        Self::of(self.kind, date) == *self
    }

    /// First day of the period.
    pub fn start(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.start_month(), 1).expect("valid period start")
    }

    /// The next period of the same kind.
    pub fn succ(&self) -> Self {
        let max = (12 / self.kind.months()) as u8;
        if self.index == max {
            PeriodId {
                year: self.year + 1,
                index: 1,
                ..*self
            }
        } else {
            PeriodId {
                index: self.index + 1,
                ..*self
            }
        }
    }
}

impl Ord for PeriodId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.year, self.start_month(), self.kind).cmp(&(
            other.year,
            other.start_month(),
            other.kind,
        ))
    }
}

impl PartialOrd for PeriodId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PeriodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            PeriodKind::Quarter => write!(f, "{}Q{}", self.year, self.index),
            PeriodKind::HalfYear => write!(f, "{}H{}", self.year, self.index),
            PeriodKind::Year => write!(f, "{}", self.year),
        }
    }
}

impl FromStr for PeriodId {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || PanelError::InvalidPeriod(s.to_string());
        let split = |sep: char, kind: PeriodKind| -> Result<PeriodId, PanelError> {
            let (y, i) = t.split_once(sep).ok_or_else(bad)?;
            PeriodId::new(
                kind,
                y.parse().map_err(|_| bad())?,
                i.parse().map_err(|_| bad())?,
            )
        };
        if t.contains('Q') {
            split('Q', PeriodKind::Quarter)
        } else if t.contains('H') {
            split('H', PeriodKind::HalfYear)
        } else {
            Ok(PeriodId::year(t.parse().map_err(|_| bad())?))
        }
    }
}

impl Serialize for PeriodId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PeriodId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Period grid for panel construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSpec {
    pub kind: PeriodKind,
    /// Postings dated inside the baseline are pooled into it, whatever its kind.
    pub baseline: Option<PeriodId>,
    /// Restrict to these periods (baseline is always kept); `None` keeps all.
    pub periods: Option<Vec<PeriodId>>,
}

impl Default for PanelSpec {
    fn default() -> Self {
        PanelSpec {
            kind: PeriodKind::Quarter,
            baseline: Some(PeriodId::year(2021)),
            periods: None,
        }
    }
}

impl PanelSpec {
    pub fn assign(&self, date: NaiveDate) -> PeriodId {
        match self.baseline {
            Some(b) if b.contains(date) => b,
            _ => PeriodId::of(self.kind, date),
        }
    }

    fn wanted(&self) -> Option<BTreeSet<PeriodId>> {
        self.periods
            .as_ref()
            .map(|ps| ps.iter().copied().chain(self.baseline).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStat {
    pub count: u64,
    /// Sum of posting weights in the cell.
    pub weight: f64,
    pub share: f64,
    pub mean: f64,
}

/// Shares and mean exposures per (period, cell). Absent cells have share 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPanel {
    periods: Vec<PeriodId>,
    cells: Vec<CellKey>,
    stats: Vec<Vec<Option<CellStat>>>,
}

/// One row of the panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub occupation: String,
    #[serde(deserialize_with = "crate::records::lenient_seniority")]
    pub seniority: Seniority,
    pub industry: String,
    pub period: PeriodId,
    pub count: u64,
    pub share: f64,
    pub mean_exposure: f64,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    count: u64,
    weight: f64,
    sum: f64,
}

impl CellPanel {
    /// Assemble from per-(period, cell) weights and means; shares are
    /// recomputed as weight over period total.
    fn assemble(
        periods: Vec<PeriodId>,
        cells: Vec<CellKey>,
        mut stats: Vec<Vec<Option<CellStat>>>,
    ) -> Result<Self, PanelError> {
        for (p, row) in periods.iter().zip(stats.iter_mut()) {
            let total: f64 = row.iter().flatten().map(|s| s.weight).sum();
            if !(total > 0.0) {
                return Err(PanelError::EmptyPeriod(*p));
            }
            for s in row.iter_mut().flatten() {
                s.share = s.weight / total;
            }
        }
        Ok(CellPanel {
            periods,
            cells,
            stats,
        })
    }

    pub fn periods(&self) -> &[PeriodId] {
        &self.periods
    }

    pub fn cells(&self) -> &[CellKey] {
        &self.cells
    }

    pub fn period_index(&self, p: &PeriodId) -> Result<usize, PanelError> {
        self.periods
            .binary_search(p)
            .map_err(|_| PanelError::MissingPeriod(*p))
    }

    pub fn stat(&self, period: usize, cell: usize) -> Option<&CellStat> {
        self.stats[period][cell].as_ref()
    }

    /// Present cells of one period as `(cell index, stat)`.
    pub fn period_cells(&self, period: usize) -> impl Iterator<Item = (usize, &CellStat)> {
        self.stats[period]
            .iter()
            .enumerate()
            .filter_map(|(c, s)| s.as_ref().map(|s| (c, s)))
    }

    /// Aggregate exposure `Σ_c w_c E_c` for one period.
    pub fn level(&self, period: usize) -> f64 {
        self.period_cells(period)
            .map(|(_, s)| s.share * s.mean)
            .sum()
    }

    pub fn total_count(&self, period: usize) -> u64 {
        self.period_cells(period).map(|(_, s)| s.count).sum()
    }

    /// Keep only cells satisfying `keep`, renormalizing shares within each period.
    pub fn restrict(&self, keep: impl Fn(&CellKey) -> bool) -> Result<CellPanel, PanelError> {
        let idx: Vec<usize> = (0..self.cells.len())
            .filter(|&c| keep(&self.cells[c]))
            .collect();
        let cells = idx.iter().map(|&c| self.cells[c].clone()).collect();
        let stats = self
            .stats
            .iter()
            .map(|row| idx.iter().map(|&c| row[c]).collect())
            .collect();
        Self::assemble(self.periods.clone(), cells, stats)
    }

    /// Keep only the listed periods, in panel order.
    pub fn select_periods(&self, keep: &[PeriodId]) -> Result<CellPanel, PanelError> {
        let mut periods = Vec::new();
        let mut stats = Vec::new();
        for p in keep.iter().collect::<BTreeSet<_>>() {
            let i = self.period_index(p)?;
            periods.push(*p);
            stats.push(self.stats[i].clone());
        }
        Ok(CellPanel {
            periods,
            cells: self.cells.clone(),
            stats,
        })
    }

    pub fn to_rows(&self) -> Vec<PanelRow> {
        let mut rows = Vec::new();
        for (p, period) in self.periods.iter().enumerate() {
            for (c, s) in self.period_cells(p) {
                let key = &self.cells[c];
                rows.push(PanelRow {
                    occupation: key.occupation.clone(),
                    seniority: key.seniority,
                    industry: key.industry.clone(),
                    period: *period,
                    count: s.count,
                    share: s.share,
                    mean_exposure: s.mean,
                });
            }
        }
        rows
    }

    /// Rebuild from exported rows. Shares are taken as given and must sum
    /// to one per period.
    pub fn from_rows(rows: &[PanelRow]) -> Result<CellPanel, PanelError> {
        let periods: Vec<PeriodId> = rows
            .iter()
            .map(|r| r.period)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let cells: Vec<CellKey> = rows
            .iter()
            .map(|r| CellKey::new(&r.occupation, r.seniority, &r.industry))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut stats = vec![vec![None; cells.len()]; periods.len()];
        for r in rows {
            if !(r.share >= 0.0 && r.share <= 1.0) || !r.mean_exposure.is_finite() {
                return Err(PanelError::InvalidRow(format!(
                    "{} {}: share or mean out of range",
                    r.occupation, r.period
                )));
            }
            let p = periods
                .binary_search(&r.period)
                .expect("period collected above");
            let key = CellKey::new(&r.occupation, r.seniority, &r.industry);
            let c = cells.binary_search(&key).expect("cell collected above");
            if stats[p][c].is_some() {
                return Err(PanelError::InvalidRow(format!(
                    "duplicate cell {key} in {}",
                    r.period
                )));
            }
            stats[p][c] = Some(CellStat {
                count: r.count,
                weight: r.share,
                share: r.share,
                mean: r.mean_exposure,
            });
        }
        for (p, row) in periods.iter().zip(&stats) {
            let sum: f64 = row.iter().flatten().map(|s| s.share).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(PanelError::SharesDoNotSum { period: *p, sum });
            }
        }
        Ok(CellPanel {
            periods,
            cells,
            stats,
        })
    }
}

/// Build the panel from posting rows. Cell means are unweighted across
/// postings; shares use the posting weight column.
pub fn build_panel(
    rows: &[ExposureRow],
    spec: &PanelSpec,
    index: IndexChoice,
) -> Result<CellPanel, PanelError> {
    type Key<'a> = (PeriodId, &'a str, Seniority, &'a str);
    let wanted = spec.wanted();
    if let Some(r) = rows.iter().find(|r| r.date.is_none()) {
        return Err(PanelError::MissingDate(r.posting_id.clone()));
    }

    // Fixed chunking and in-order merging keep float sums identical across runs.
    let partials: Vec<HashMap<Key, Acc>> = rows
        .par_chunks(1 << 15)
        .map(|chunk| {
            let mut m: HashMap<Key, Acc> = HashMap::new();
            for r in chunk {
                let period = spec.assign(r.date.expect("checked above"));
                if wanted.as_ref().is_some_and(|w| !w.contains(&period)) {
                    continue;
                }
                let a = m
                    .entry((
                        period,
                        r.occupation.as_str(),
                        r.seniority,
                        sector_code(&r.industry),
                    ))
                    .or_default();
                a.count += 1;
                a.weight += r.weight;
                a.sum += r.index(index);
            }
            m
        })
        .collect();
    let mut merged: BTreeMap<Key, Acc> = BTreeMap::new();
    for part in partials {
        let mut part: Vec<_> = part.into_iter().collect();
        part.sort_by(|a, b| a.0.cmp(&b.0));
        for (k, a) in part {
            let m = merged.entry(k).or_default();
            m.count += a.count;
            m.weight += a.weight;
            m.sum += a.sum;
        }
    }

    let periods: Vec<PeriodId> = match &wanted {
        Some(w) => w.iter().copied().collect(),
        None => merged
            .keys()
            .map(|k| k.0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let cells: Vec<CellKey> = merged
        .keys()
        .map(|&(_, o, s, i)| CellKey {
            occupation: o.to_string(),
            seniority: s,
            industry: i.to_string(),
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut stats = vec![vec![None; cells.len()]; periods.len()];
    for (&(period, o, s, i), a) in &merged {
        let p = periods
            .binary_search(&period)
            .expect("period collected above");
        let key = CellKey {
            occupation: o.to_string(),
            seniority: s,
            industry: i.to_string(),
        };
        let c = cells.binary_search(&key).expect("cell collected above");
        stats[p][c] = Some(CellStat {
            count: a.count,
            weight: a.weight,
            share: 0.0,
            mean: a.sum / a.count as f64,
        });
    }
    CellPanel::assemble(periods, cells, stats)
}

/// Overlap diagnostics between the baseline and period `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupportDiagnostics {
    pub period: PeriodId,
    /// Share of period-t mass inside the common support.
    pub m_cur: f64,
    /// Share of baseline mass inside the common support.
    pub m_base: f64,
    /// Full-sample level at t minus the renormalized common-support level.
    pub gap: f64,
    pub raw_total_change: f64,
    pub renorm_total_change: f64,
    pub residual: f64,
}

/// Aligned baseline/current arrays over a set of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCells {
    pub cells: Vec<usize>,
    pub w_base: Vec<f64>,
    pub e_base: Vec<f64>,
    pub w_cur: Vec<f64>,
    pub e_cur: Vec<f64>,
}

impl AlignedCells {
    pub fn level_base(&self) -> f64 {
        self.w_base
            .iter()
            .zip(&self.e_base)
            .map(|(w, e)| w * e)
            .sum()
    }

    pub fn level_cur(&self) -> f64 {
        self.w_cur.iter().zip(&self.e_cur).map(|(w, e)| w * e).sum()
    }

    /// Gather the listed cells and renormalize shares within them.
    pub fn gather(panel: &CellPanel, base: usize, t: usize, cells: Vec<usize>) -> (Self, f64, f64) {
        let mut out = AlignedCells {
            w_base: Vec::with_capacity(cells.len()),
            e_base: Vec::with_capacity(cells.len()),
            w_cur: Vec::with_capacity(cells.len()),
            e_cur: Vec::with_capacity(cells.len()),
            cells,
        };
        for &c in &out.cells {
            let (b, k) = (
                panel.stat(base, c).expect("cell in support"),
                panel.stat(t, c).expect("cell in support"),
            );
            out.w_base.push(b.share);
            out.e_base.push(b.mean);
            out.w_cur.push(k.share);
            out.e_cur.push(k.mean);
        }
        let m_base: f64 = out.w_base.iter().sum();
        let m_cur: f64 = out.w_cur.iter().sum();
        for w in &mut out.w_base {
            *w /= m_base;
        }
        for w in &mut out.w_cur {
            *w /= m_cur;
        }
        // Shares of a full period can sum to one plus rounding.
        (out, m_base.min(1.0), m_cur.min(1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommonSupport {
    pub aligned: AlignedCells,
    pub diagnostics: SupportDiagnostics,
}

/// Cells present in both periods, with shares renormalized inside them.
pub fn common_support(
    panel: &CellPanel,
    base: &PeriodId,
    t: &PeriodId,
) -> Result<CommonSupport, PanelError> {
    let (b, k) = (panel.period_index(base)?, panel.period_index(t)?);
    let cells: Vec<usize> = (0..panel.cells().len())
        .filter(|&c| panel.stat(b, c).is_some() && panel.stat(k, c).is_some())
        .collect();
    if cells.is_empty() {
        return Err(PanelError::EmptySupport { base: *base, t: *t });
    }
    let (aligned, m_base, m_cur) = AlignedCells::gather(panel, b, k, cells);
    let (raw_base, raw_cur) = (panel.level(b), panel.level(k));
    let (cs_base, cs_cur) = (aligned.level_base(), aligned.level_cur());
    let raw_total_change = raw_cur - raw_base;
    let renorm_total_change = cs_cur - cs_base;
    Ok(CommonSupport {
        aligned,
        diagnostics: SupportDiagnostics {
            period: *t,
            m_cur,
            m_base,
            gap: raw_cur - cs_cur,
            raw_total_change,
            renorm_total_change,
            residual: raw_total_change - renorm_total_change,
        },
    })
}

/// What the sampler needs from a posting.
pub trait Sampleable {
    fn posting_id(&self) -> &str;
    fn occupation(&self) -> &str;
    fn seniority(&self) -> Seniority;
    fn industry(&self) -> &str;
    fn date(&self) -> Option<NaiveDate>;
}

impl Sampleable for ExposureRow {
    fn posting_id(&self) -> &str {
        &self.posting_id
    }
    fn occupation(&self) -> &str {
        &self.occupation
    }
    fn seniority(&self) -> Seniority {
        self.seniority
    }
    fn industry(&self) -> &str {
        &self.industry
    }
    fn date(&self) -> Option<NaiveDate> {
        self.date
    }
}

impl Sampleable for PostingRecord {
    fn posting_id(&self) -> &str {
        &self.input.posting_id
    }
    fn occupation(&self) -> &str {
        &self.meta.occupation
    }
    fn seniority(&self) -> Seniority {
        self.meta.seniority
    }
    fn industry(&self) -> &str {
        &self.meta.industry
    }
    fn date(&self) -> Option<NaiveDate> {
        self.meta.date
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplingReport {
    pub input_postings: usize,
    pub input_groups: usize,
    pub dropped_groups: usize,
    pub dropped_postings: usize,
    /// Dropped postings over input postings.
    pub dropped_fraction: f64,
    pub sampled_postings: usize,
}

/// Uniform draw in [0, 1) keyed on seed, cell, half-year and posting id.
pub fn sampling_draw(
    seed: u64,
    occupation: &str,
    seniority: Seniority,
    industry: &str,
    period: PeriodId,
    id: &str,
) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for part in [
        occupation,
        seniority.as_str(),
        industry,
        &period.to_string(),
        id,
    ] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    let d = h.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&d[..8]);
    (u64::from_le_bytes(head) >> 11) as f64 / (1u64 << 53) as f64
}

/// Drop (cell, half-year) groups smaller than `min_cell_size`, then keep
/// each remaining posting with probability `rate`. Returns kept indices in
/// input order.
pub fn sample_postings<T: Sampleable + Sync>(
    items: &[T],
    rate: f64,
    min_cell_size: usize,
    seed: u64,
) -> Result<(Vec<usize>, SamplingReport), PanelError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(PanelError::InvalidRate(rate));
    }
    let half = |t: &T| -> Result<PeriodId, PanelError> {
        t.date()
            .map(|d| PeriodId::of(PeriodKind::HalfYear, d))
            .ok_or_else(|| PanelError::MissingDate(t.posting_id().to_string()))
    };
    let mut groups: HashMap<(PeriodId, &str, Seniority, &str), usize> = HashMap::new();
    for t in items {
        *groups
            .entry((
                half(t)?,
                t.occupation(),
                t.seniority(),
                sector_code(t.industry()),
            ))
            .or_default() += 1;
    }
    let kept: Vec<usize> = items
        .par_iter()
        .enumerate()
        .filter(|(_, t)| {
            let p = half(t).expect("dates checked above");
            let ind = sector_code(t.industry());
            groups[&(p, t.occupation(), t.seniority(), ind)] >= min_cell_size
                && sampling_draw(seed, t.occupation(), t.seniority(), ind, p, t.posting_id()) < rate
        })
        .map(|(i, _)| i)
        .collect();
    let dropped_groups = groups.values().filter(|&&n| n < min_cell_size).count();
    let dropped_postings: usize = groups.values().filter(|&&n| n < min_cell_size).sum();
    let report = SamplingReport {
        input_postings: items.len(),
        input_groups: groups.len(),
        dropped_groups,
        dropped_postings,
        dropped_fraction: if items.is_empty() {
            0.0
        } else {
            dropped_postings as f64 / items.len() as f64
        },
        sampled_postings: kept.len(),
    };
    Ok((kept, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tercile {
    Low,
    Middle,
    High,
}

impl Tercile {
    pub const ALL: [Tercile; 3] = [Tercile::Low, Tercile::Middle, Tercile::High];
}

/// Occupation mean index over all postings (unweighted), keyed by code.
pub fn occupation_means(
    rows: &[ExposureRow],
    index: IndexChoice,
) -> BTreeMap<String, (usize, f64)> {
    let mut acc: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for r in rows {
        let a = acc.entry(&r.occupation).or_default();
        a.0 += 1;
        a.1 += r.index(index);
    }
    acc.into_iter()
        .map(|(k, (n, s))| (k.to_string(), (n, s / n as f64)))
        .collect()
}

/// Rank occupations by mean index and cut into thirds; rank `i` of `n`
/// lands in tercile `floor(3i / n)`. Ties go to the lower code first.
pub fn occupation_terciles(rows: &[ExposureRow], index: IndexChoice) -> BTreeMap<String, Tercile> {
    let mut ranked: Vec<(String, f64)> = occupation_means(rows, index)
        .into_iter()
        .map(|(k, (_, m))| (k, m))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let n = ranked.len();
    ranked
        .into_iter()
        .enumerate()
        .map(|(i, (k, _))| (k, Tercile::ALL[3 * i / n]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TercilePoint {
    pub period: PeriodId,
    pub tercile: Tercile,
    pub postings: usize,
    pub mean: f64,
    /// Mean minus the tercile's baseline mean.
    pub change: f64,
}

/// Per-period mean index for each tercile, relative to the first period.
pub fn tercile_series(
    rows: &[ExposureRow],
    spec: &PanelSpec,
    index: IndexChoice,
    terciles: &BTreeMap<String, Tercile>,
) -> Result<Vec<TercilePoint>, PanelError> {
    let mut acc: BTreeMap<(PeriodId, Tercile), (usize, f64)> = BTreeMap::new();
    let wanted = spec.wanted();
    for r in rows {
        let date = r
            .date
            .ok_or_else(|| PanelError::MissingDate(r.posting_id.clone()))?;
        let p = spec.assign(date);
        if wanted.as_ref().is_some_and(|w| !w.contains(&p)) {
            continue;
        }
        if let Some(&t) = terciles.get(&r.occupation) {
            let a = acc.entry((p, t)).or_default();
            a.0 += 1;
            a.1 += r.index(index);
        }
    }
    let first = acc.keys().next().map(|k| k.0);
    let base = spec.baseline.or(first);
    let base_mean = |t: Tercile| {
        base.and_then(|b| acc.get(&(b, t)))
            .map(|&(n, s)| s / n as f64)
    };
    Ok(acc
        .iter()
        .map(|(&(period, tercile), &(n, s))| {
            let mean = s / n as f64;
            TercilePoint {
                period,
                tercile,
                postings: n,
                mean,
                change: mean - base_mean(tercile).unwrap_or(f64::NAN),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::ExposureLabel;
    use crate::records::PostingMeta;
    use proptest::prelude::*;

    pub(crate) fn row(
        id: &str,
        occ: &str,
        ind: &str,
        date: (i32, u32, u32),
        beta: f64,
    ) -> ExposureRow {
        let meta = PostingMeta {
            occupation: occ.into(),
            industry: ind.into(),
            date: NaiveDate::from_ymd_opt(date.0, date.1, date.2),
            ..PostingMeta::default()
        };
        let mut r = ExposureRow::from_parts(id, &meta, &[(1, ExposureLabel::E0)]).unwrap();
        r.beta = beta;
        r
    }

    #[test]
    fn period_ids() {
        let d = NaiveDate::from_ymd_opt(2023, 8, 14).unwrap();
        assert_eq!(PeriodId::of(PeriodKind::Quarter, d).to_string(), "2023Q3");
        assert_eq!(PeriodId::of(PeriodKind::HalfYear, d).to_string(), "2023H2");
        assert_eq!(PeriodId::of(PeriodKind::Year, d).to_string(), "2023");
        for s in ["2023Q3", "2022H1", "2021"] {
            assert_eq!(s.parse::<PeriodId>().unwrap().to_string(), s);
        }
        assert!("2023Q5".parse::<PeriodId>().is_err());
        assert!("2023H0".parse::<PeriodId>().is_err());
        assert!(PeriodId::year(2021) < PeriodId::quarter(2022, 1));
        assert!(PeriodId::quarter(2022, 4) < PeriodId::quarter(2023, 1));
        assert_eq!(
            PeriodId::quarter(2022, 4).succ(),
            PeriodId::quarter(2023, 1)
        );
        assert_eq!(
            PeriodId::quarter(2023, 3).start(),
            NaiveDate::from_ymd_opt(2023, 7, 1).unwrap()
        );
    }

    #[test]
    fn industry_truncated_and_seniority_default() {
        let k = CellKey::new("11-1011.00", "".parse().unwrap(), "541511");
        assert_eq!(k.industry, "54");
        assert_eq!(k.seniority, Seniority::Intermediate);
        assert!("principal".parse::<Seniority>().is_err());
    }

    #[test]
    fn single_cell_mean() {
        let rows = vec![
            row("a", "o1", "51", (2022, 1, 3), 0.4),
            row("b", "o1", "51", (2022, 2, 3), 0.6),
        ];
        let p = build_panel(&rows, &PanelSpec::default(), IndexChoice::Beta).unwrap();
        let s = p.stat(0, 0).unwrap();
        assert_eq!((s.count, s.share), (2, 1.0));
        assert!((s.mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shares_by_count() {
        let mut rows: Vec<_> = (0..3)
            .map(|i| row(&format!("a{i}"), "o1", "51", (2022, 1, 3), 0.2))
            .collect();
        rows.push(row("b", "o2", "51", (2022, 1, 3), 0.8));
        let p = build_panel(&rows, &PanelSpec::default(), IndexChoice::Beta).unwrap();
        let shares: Vec<f64> = p.period_cells(0).map(|(_, s)| s.share).collect();
        assert_eq!(shares, vec![0.75, 0.25]);
        assert!((p.level(0) - (0.75 * 0.2 + 0.25 * 0.8)).abs() < 1e-15);
    }

    #[test]
    fn baseline_year_is_pooled() {
        let rows = vec![
            row("a", "o1", "51", (2021, 2, 1), 0.1),
            row("b", "o1", "51", (2021, 11, 1), 0.3),
            row("c", "o1", "51", (2022, 5, 1), 0.5),
        ];
        let p = build_panel(&rows, &PanelSpec::default(), IndexChoice::Beta).unwrap();
        assert_eq!(
            p.periods(),
            &[PeriodId::year(2021), PeriodId::quarter(2022, 2)]
        );
        assert_eq!(p.stat(0, 0).unwrap().count, 2);
    }

    #[test]
    fn requested_empty_period_is_an_error() {
        let rows = vec![row("a", "o1", "51", (2021, 2, 1), 0.1)];
        let spec = PanelSpec {
            periods: Some(vec![PeriodId::quarter(2023, 1)]),
            ..PanelSpec::default()
        };
        assert_eq!(
            build_panel(&rows, &spec, IndexChoice::Beta),
            Err(PanelError::EmptyPeriod(PeriodId::quarter(2023, 1)))
        );
    }

    #[test]
    fn support_cases() {
        let rows = vec![
            row("a", "A", "51", (2021, 2, 1), 0.2),
            row("b", "B", "51", (2021, 2, 1), 0.4),
            row("c", "B", "51", (2022, 2, 1), 0.6),
            row("d", "C", "51", (2022, 2, 1), 0.8),
        ];
        let p = build_panel(&rows, &PanelSpec::default(), IndexChoice::Beta).unwrap();
        let cs = common_support(&p, &PeriodId::year(2021), &PeriodId::quarter(2022, 1)).unwrap();
        assert_eq!(cs.aligned.w_base, vec![1.0]);
        assert_eq!(cs.aligned.w_cur, vec![1.0]);
        let d = cs.diagnostics;
        assert_eq!((d.m_base, d.m_cur), (0.5, 0.5));
        assert!((d.raw_total_change - 0.4).abs() < 1e-15);
        assert!((d.renorm_total_change - 0.2).abs() < 1e-15);
        assert!((d.gap - 0.1).abs() < 1e-15);
        assert_eq!(d.residual, d.raw_total_change - d.renorm_total_change);

        let full = common_support(&p, &PeriodId::year(2021), &PeriodId::year(2021)).unwrap();
        assert_eq!(
            (full.diagnostics.m_base, full.diagnostics.m_cur),
            (1.0, 1.0)
        );
        assert_eq!(full.aligned.w_base, vec![0.5, 0.5]);

        let only = vec![
            row("a", "A", "51", (2021, 2, 1), 0.2),
            row("z", "Z", "51", (2022, 2, 1), 0.2),
        ];
        let p = build_panel(&only, &PanelSpec::default(), IndexChoice::Beta).unwrap();
        assert!(matches!(
            common_support(&p, &PeriodId::year(2021), &PeriodId::quarter(2022, 1)),
            Err(PanelError::EmptySupport { .. })
        ));
    }

    #[test]
    fn csv_rows_round_trip() {
        let rows = vec![
            row("a", "A", "51", (2021, 2, 1), 0.2),
            row("b", "B", "52", (2021, 2, 1), 1.0 / 3.0),
            row("c", "B", "52", (2022, 2, 1), 0.6),
        ];
        let p = build_panel(&rows, &PanelSpec::default(), IndexChoice::Beta).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        crate::records::write_csv(&path, &p.to_rows()).unwrap();
        let back =
            CellPanel::from_rows(&crate::records::read_csv::<PanelRow>(&path).unwrap()).unwrap();
        assert_eq!(back.to_rows(), p.to_rows());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(
            text.starts_with("occupation,seniority,industry,period,count,share,mean_exposure\n")
        );
    }

    #[test]
    fn sampling_drops_small_groups() {
        let mut rows: Vec<_> = (0..19)
            .map(|i| row(&format!("s{i}"), "small", "51", (2022, 1, 3), 0.2))
            .collect();
        rows.extend((0..25).map(|i| row(&format!("b{i}"), "big", "51", (2022, 1, 3), 0.2)));
        let (kept, rep) = sample_postings(&rows, 1.0, 20, 7).unwrap();
        assert_eq!(kept, (19..44).collect::<Vec<_>>());
        assert_eq!((rep.dropped_groups, rep.dropped_postings), (1, 19));
        assert!((rep.dropped_fraction - 19.0 / 44.0).abs() < 1e-15);
        assert!(sample_postings(&rows, 0.0, 20, 7).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let rows: Vec<_> = (0..4000)
            .map(|i| row(&format!("p{i}"), "o", "51", (2022, 1, 3), 0.2))
            .collect();
        let (a, _) = sample_postings(&rows, 0.3, 0, 1).unwrap();
        let (b, _) = sample_postings(&rows, 0.3, 0, 1).unwrap();
        let (c, _) = sample_postings(&rows, 0.3, 0, 2).unwrap();
        assert_eq!(a, b);
        let both =
            a.iter().filter(|i| c.binary_search(i).is_ok()).count() as f64 / rows.len() as f64;
        assert!((both - 0.09).abs() < 0.02, "overlap {both}");
    }

    #[test]
    fn terciles_by_rank() {
        let rows = vec![
            row("a", "o3", "51", (2022, 1, 3), 0.9),
            row("b", "o1", "51", (2022, 1, 3), 0.1),
            row("c", "o2", "51", (2022, 1, 3), 0.5),
        ];
        let t = occupation_terciles(&rows, IndexChoice::Beta);
        assert_eq!(t["o1"], Tercile::Low);
        assert_eq!(t["o2"], Tercile::Middle);
        assert_eq!(t["o3"], Tercile::High);

        let six: Vec<_> = (0..6)
            .map(|i| row(&format!("p{i}"), &format!("o{i}"), "51", (2022, 1, 3), 0.5))
            .collect();
        let t = occupation_terciles(&six, IndexChoice::Beta);
        let lows: Vec<&str> = t
            .iter()
            .filter(|(_, &v)| v == Tercile::Low)
            .map(|(k, _)| k.as_str())
            .collect();
        assert_eq!(lows, ["o0", "o1"]);
        assert_eq!(t.values().filter(|&&v| v == Tercile::High).count(), 2);
    }

    #[test]
    fn tercile_series_against_brute_force() {
        let mut rows = Vec::new();
        for i in 0..60 {
            let occ = format!("o{}", i % 6);
            let year = 2021 + i % 3;
            rows.push(row(
                &format!("p{i}"),
                &occ,
                "51",
                (year, 1 + (i % 12) as u32, 1),
                (i % 7) as f64 / 7.0,
            ));
        }
        let spec = PanelSpec::default();
        let terc = occupation_terciles(&rows, IndexChoice::Beta);
        let series = tercile_series(&rows, &spec, IndexChoice::Beta, &terc).unwrap();
        for pt in &series {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| {
                    spec.assign(r.date.unwrap()) == pt.period && terc[&r.occupation] == pt.tercile
                })
                .map(|r| r.beta)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - pt.mean).abs() < 1e-12);
            assert_eq!(vals.len(), pt.postings);
        }
        assert!(series
            .iter()
            .filter(|p| p.period == PeriodId::year(2021))
            .all(|p| p.change == 0.0));
    }

    proptest! {
        #[test]
        fn panel_level_equals_posting_mean(
            obs in prop::collection::vec((0usize..6, 0usize..3, 0u32..12, 0.0f64..1.0), 1..200)
        ) {
            let rows: Vec<ExposureRow> = obs
                .iter()
                .enumerate()
                .map(|(i, &(o, s, m, b))| {
                    let mut r = row(&format!("p{i}"), &format!("o{o}"), "51", (2022, m + 1, 1), b);
                    r.seniority = Seniority::ALL[s];
                    r
                })
                .collect();
            let spec = PanelSpec { kind: PeriodKind::Quarter, baseline: None, periods: None };
            let panel = build_panel(&rows, &spec, IndexChoice::Beta).unwrap();
            for (pi, p) in panel.periods().iter().enumerate() {
                let inp: Vec<f64> = rows.iter().filter(|r| p.contains(r.date.unwrap())).map(|r| r.beta).collect();
                let direct = inp.iter().sum::<f64>() / inp.len() as f64;
                prop_assert!((panel.level(pi) - direct).abs() < 1e-12);
                let sum: f64 = panel.period_cells(pi).map(|(_, s)| s.share).sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }
}
