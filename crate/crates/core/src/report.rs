//! Table and chart emission.
//!
//! Tables are comma-separated with one header row. Numbers print with four
//! decimals; each table also has a `.raw.csv` companion at full precision.
//! Charts are standalone SVG whose marks carry their values as `data-*`
//! attributes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::exposure::IndexChoice;
use crate::kitagawa::{
    Contributions, CounterfactualPath, DecompResult, SignPatternBreakdown, TwofoldResult,
    WithinSectorResult,
};
use crate::oaxaca::ObResult;
use crate::panel::{PanelSpec, PeriodId, Seniority, TercilePoint};
use crate::records::ExposureRow;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Text(String),
    Int(u64),
    Num(f64),
}

impl Value {
    fn render(&self, raw: bool) -> String {
        match self {
            Value::Text(s) => s.clone(),
            Value::Int(n) => n.to_string(),
            Value::Num(x) if raw => format!("{x:e}"),
            Value::Num(x) => {
                let s = format!("{x:.4}");
                if s == "-0.0000" {
                    "0.0000".into()
                } else {
                    s
                }
            }
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<usize> for Value {
    fn from(n: usize) -> Self {
        Value::Int(n as u64)
    }
}

impl From<u64> for Value {
    fn from(n: u64) -> Self {
        Value::Int(n)
    }
}

impl From<PeriodId> for Value {
    fn from(p: PeriodId) -> Self {
        Value::Text(p.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$(Value::from($v)),*] };
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, raw: bool) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.render(raw)))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Write `<name>.csv` and `<name>.raw.csv` under `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> std::io::Result<Vec<PathBuf>> {
        let fmt = dir.join(format!("{name}.csv"));
        let raw = dir.join(format!("{name}.raw.csv"));
        std::fs::write(&fmt, self.to_csv(false))?;
        std::fs::write(&raw, self.to_csv(true))?;
        Ok(vec![fmt, raw])
    }

    /// Numeric column by header name, for tests and summaries.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[i] {
                    Value::Num(x) => *x,
                    Value::Int(n) => *n as f64,
                    Value::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }
}

pub fn decomposition_table(results: &[DecompResult]) -> Table {
    let mut t = Table::new(&[
        "period",
        "total",
        "composition",
        "within",
        "interaction",
        "check",
        "n_cells",
        "excluded_cells",
    ]);
    for r in results {
        let check = r.total - (r.composition + r.within + r.interaction);
        t.push(row![
            r.period,
            r.total,
            r.composition,
            r.within,
            r.interaction,
            check,
            r.n_cells,
            r.excluded_cells
        ]);
    }
    t
}

pub fn support_table(results: &[DecompResult]) -> Table {
    let mut t = Table::new(&[
        "period",
        "m_cur",
        "m_base",
        "gap",
        "raw_total_change",
        "renorm_total_change",
        "residual",
    ]);
    for r in results {
        let d = &r.diagnostics;
        t.push(row![
            d.period,
            d.m_cur,
            d.m_base,
            d.gap,
            d.raw_total_change,
            d.renorm_total_change,
            d.residual
        ]);
    }
    t
}

pub fn twofold_table(results: &[TwofoldResult]) -> Table {
    let mut t = Table::new(&["period", "total", "composition", "within", "check"]);
    for r in results {
        t.push(row![
            r.period,
            r.total,
            r.composition,
            r.within,
            r.total - (r.composition + r.within)
        ]);
    }
    t
}

pub fn within_sector_table(results: &[WithinSectorResult]) -> Table {
    let mut t = Table::new(&[
        "period",
        "sector",
        "weight",
        "total",
        "composition",
        "within",
        "interaction",
        "n_cells",
    ]);
    for r in results {
        let a = r.aggregate;
        let n: usize = r.sectors.iter().map(|s| s.n_cells).sum();
        t.push(row![
            r.period,
            "ALL",
            1.0,
            a.total,
            a.composition,
            a.within,
            a.interaction,
            n
        ]);
        for s in &r.sectors {
            let c = s.components;
            t.push(row![
                r.period,
                s.sector.as_str(),
                s.weight,
                c.total,
                c.composition,
                c.within,
                c.interaction,
                s.n_cells
            ]);
        }
    }
    t
}

pub fn by_seniority_table(results: &[(Seniority, Vec<DecompResult>)]) -> Table {
    let mut t = Table::new(&[
        "seniority",
        "period",
        "total",
        "composition",
        "within",
        "interaction",
        "check",
        "n_cells",
    ]);
    for (s, rs) in results {
        for r in rs {
            let check = r.total - (r.composition + r.within + r.interaction);
            t.push(row![
                s.as_str(),
                r.period,
                r.total,
                r.composition,
                r.within,
                r.interaction,
                check,
                r.n_cells
            ]);
        }
    }
    t
}

pub fn sign_pattern_table(results: &[SignPatternBreakdown]) -> Table {
    let mut t = Table::new(&[
        "period",
        "neg_dw_pos_de",
        "pos_dw_neg_de",
        "pos_dw_pos_de",
        "neg_dw_neg_de",
        "zero_change",
        "interaction",
    ]);
    for r in results {
        t.push(row![
            r.period,
            r.neg_pos,
            r.pos_neg,
            r.pos_pos,
            r.neg_neg,
            r.zero_change,
            r.interaction
        ]);
    }
    t
}

pub fn counterfactual_table(paths: &[CounterfactualPath]) -> Table {
    let mut t = Table::new(&[
        "period",
        "baseline_level",
        "observed",
        "observed_raw",
        "composition_only",
        "within_only",
    ]);
    for p in paths {
        t.push(row![
            p.period,
            p.baseline_level,
            p.observed,
            p.observed_raw,
            p.composition_only,
            p.within_only
        ]);
    }
    t
}

pub fn contributions_table(rows: &[(String, Contributions)]) -> Table {
    let mut t = Table::new(&[
        "sample",
        "from",
        "periods",
        "composition_pct",
        "within_pct",
        "interaction_pct",
    ]);
    for (label, c) in rows {
        t.push(row![
            label.as_str(),
            c.from,
            c.periods,
            c.composition,
            c.within,
            c.interaction
        ]);
    }
    t
}

pub fn ob_summary_table(r: &ObResult) -> Table {
    let mut t = Table::new(&[
        "mean_pre",
        "mean_post",
        "gap",
        "explained",
        "unexplained",
        "explained_pct",
        "unexplained_pct",
        "n_pre",
        "n_post",
        "dropped_pre",
        "dropped_post",
    ]);
    let gap = r.gap();
    let pct = |x: f64| if gap == 0.0 { 0.0 } else { 100.0 * x / gap };
    t.push(row![
        r.mean_a,
        r.mean_b,
        gap,
        r.explained,
        r.unexplained,
        pct(r.explained),
        pct(r.unexplained),
        r.fit_a.n_obs,
        r.fit_b.n_obs,
        r.fit_a.dropped.len(),
        r.fit_b.dropped.len(),
    ]);
    t
}

/// Block contributions, largest magnitude first.
pub fn ob_block_table(r: &ObResult) -> Table {
    let mut blocks: Vec<_> = r.blocks.iter().collect();
    blocks.sort_by(|a, b| {
        b.contribution
            .abs()
            .total_cmp(&a.contribution.abs())
            .then_with(|| a.block.cmp(&b.block))
    });
    let mut t = Table::new(&["block", "contribution", "share_of_explained_pct"]);
    for b in blocks {
        let share = if r.explained == 0.0 {
            0.0
        } else {
            100.0 * b.contribution / r.explained
        };
        t.push(row![b.block.as_str(), b.contribution, share]);
    }
    t
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, sd)
}

type Measure = (&'static str, fn(&ExposureRow) -> f64);

/// Posting-level means and sample SDs of shares and indices, overall and
/// by seniority.
pub fn summary_table(rows: &[ExposureRow]) -> Table {
    let mut t = Table::new(&[
        "measure",
        "all_mean",
        "all_sd",
        "junior_mean",
        "junior_sd",
        "intermediate_mean",
        "intermediate_sd",
        "senior_mean",
        "senior_sd",
    ]);
    let groups: Vec<Vec<&ExposureRow>> = std::iter::once(rows.iter().collect())
        .chain(
            Seniority::ALL
                .iter()
                .map(|s| rows.iter().filter(|r| r.seniority == *s).collect()),
        )
        .collect();
    let measures: [Measure; 6] = [
        ("e0", |r| r.e0),
        ("e1", |r| r.e1),
        ("e2", |r| r.e2),
        ("alpha", |r| r.alpha),
        ("beta", |r| r.beta),
        ("gamma", |r| r.gamma),
    ];
    for (name, f) in measures {
        let mut row = vec![Value::from(name)];
        for g in &groups {
            let (m, s) = mean_sd(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            row.extend([Value::Num(m), Value::Num(s)]);
        }
        t.push(row);
    }
    let mut row = vec![Value::from("postings")];
    for g in &groups {
        row.extend([Value::from(g.len()), Value::from("")]);
    }
    t.push(row);
    t
}

const SECTOR_NAMES: [(&str, &str); 21] = [
    ("11", "Agriculture, Forestry, Fishing and Hunting"),
    ("21", "Mining, Quarrying, and Oil and Gas Extraction"),
    ("22", "Utilities"),
    ("23", "Construction"),
    ("31-33", "Manufacturing"),
    ("42", "Wholesale Trade"),
    ("44-45", "Retail Trade"),
    ("48-49", "Transportation and Warehousing"),
    ("51", "Information"),
    ("52", "Finance and Insurance"),
    ("53", "Real Estate and Rental and Leasing"),
    ("54", "Professional, Scientific, and Technical Services"),
    ("55", "Management of Companies and Enterprises"),
    (
        "56",
        "Administrative and Support and Waste Management Services",
    ),
    ("61", "Educational Services"),
    ("62", "Health Care and Social Assistance"),
    ("71", "Arts, Entertainment, and Recreation"),
    ("72", "Accommodation and Food Services"),
    ("81", "Other Services (except Public Administration)"),
    ("92", "Public Administration"),
    ("99", "Unclassified"),
];

/// Two-digit NAICS code with multi-code sectors merged.
pub fn sector_group(industry: &str) -> String {
    let code: String = industry.chars().take(2).collect();
    match code.as_str() {
        "31" | "32" | "33" => "31-33".into(),
        "44" | "45" => "44-45".into(),
        "48" | "49" => "48-49".into(),
        _ => code,
    }
}

pub fn sector_name(group: &str) -> &'static str {
    SECTOR_NAMES
        .iter()
        .find(|(c, _)| *c == group)
        .map_or("Unknown", |(_, n)| n)
}

/// Unweighted posting mean of the index by sector, highest first.
pub fn sector_table(rows: &[ExposureRow], index: IndexChoice) -> Table {
    let mut acc: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for r in rows {
        let a = acc.entry(sector_group(&r.industry)).or_default();
        a.0 += 1;
        a.1 += r.index(index);
    }
    let mut sectors: Vec<(String, usize, f64)> = acc
        .into_iter()
        .map(|(k, (n, s))| (k, n, s / n as f64))
        .collect();
    sectors.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    let mut t = Table::new(&["sector", "name", "postings", "mean"]);
    for (code, n, m) in sectors {
        let name = sector_name(&code);
        t.push(row![code, name, n, m]);
    }
    t
}

/// The `k` highest- and lowest-mean occupations. Both groups list ranks in
/// descending order of mean.
pub fn top_bottom_table(rows: &[ExposureRow], index: IndexChoice, k: usize) -> Table {
    let mut ranked: Vec<(String, usize, f64)> = crate::panel::occupation_means(rows, index)
        .into_iter()
        .map(|(c, (n, m))| (c, n, m))
        .collect();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    let k = k.min(ranked.len());
    let mut t = Table::new(&["group", "rank", "occupation", "postings", "mean"]);
    for (i, (c, n, m)) in ranked[ranked.len() - k..].iter().enumerate() {
        t.push(row!["bottom", i + 1, c.as_str(), *n, *m]);
    }
    for (i, (c, n, m)) in ranked[..k].iter().enumerate() {
        t.push(row!["top", i + 1, c.as_str(), *n, *m]);
    }
    t
}

pub fn tercile_table(points: &[TercilePoint]) -> Table {
    let mut t = Table::new(&["period", "tercile", "postings", "mean", "change"]);
    for p in points {
        t.push(row![
            p.period,
            format!("{:?}", p.tercile),
            p.postings,
            p.mean,
            p.change
        ]);
    }
    t
}

/// Unweighted mean index per period, overall and by seniority. Postings
/// without a date are skipped.
pub fn seniority_trend_table(rows: &[ExposureRow], spec: &PanelSpec, index: IndexChoice) -> Table {
    let mut acc: BTreeMap<PeriodId, [(usize, f64); 4]> = BTreeMap::new();
    for r in rows {
        let Some(d) = r.date else { continue };
        let slot = acc.entry(spec.assign(d)).or_default();
        let v = r.index(index);
        let s = 1 + Seniority::ALL
            .iter()
            .position(|x| *x == r.seniority)
            .expect("known seniority");
        for i in [0, s] {
            slot[i].0 += 1;
            slot[i].1 += v;
        }
    }
    let mut t = Table::new(&[
        "period",
        "all",
        "junior",
        "intermediate",
        "senior",
        "postings",
    ]);
    for (p, g) in acc {
        let m = |(n, s): (usize, f64)| if n == 0 { f64::NAN } else { s / n as f64 };
        t.push(row![p, m(g[0]), m(g[1]), m(g[2]), m(g[3]), g[0].0]);
    }
    t
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

/// Round tick step covering `span` in about `n` intervals.
fn tick_step(span: f64, n: f64) -> f64 {
    if !(span > 0.0) {
        return 1.0;
    }
    let raw = span / n;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

/// Axis bounds snapped to ticks, always including zero.
fn axis(lo: f64, hi: f64) -> (f64, f64, f64) {
    let (lo, hi) = (lo.min(0.0), hi.max(0.0));
    let (lo, hi) = if hi - lo > 0.0 { (lo, hi) } else { (-1.0, 1.0) };
    let step = tick_step(hi - lo, 5.0);
    ((lo / step).floor() * step, (hi / step).ceil() * step, step)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Stacked component bars per period with the total change as a line.
pub fn decomposition_svg(title: &str, rows: &[(String, f64, f64, f64, f64)]) -> String {
    const COMPONENTS: [(&str, &str); 3] = [
        ("composition", "#4c72b0"),
        ("within", "#dd8452"),
        ("interaction", "#55a868"),
    ];
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for (_, c, w, i, total) in rows {
        let pos: f64 = [c, w, i].iter().map(|x| x.max(0.0)).sum();
        let neg: f64 = [c, w, i].iter().map(|x| x.min(0.0)).sum();
        lo = lo.min(neg).min(*total);
        hi = hi.max(pos).max(*total);
    }
    let (ymin, ymax, step) = axis(lo, hi);
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let y = |v: f64| MARGIN + (ymax - v) / (ymax - ymin) * plot_h;
    let slot = plot_w / rows.len().max(1) as f64;
    let bar_w = slot * 0.6;

    let mut s = svg_open(title);
    y_axis(&mut s, ymin, ymax, step, &y);
    for (k, (label, c, w, i, _)) in rows.iter().enumerate() {
        let x0 = MARGIN + slot * k as f64 + (slot - bar_w) / 2.0;
        let (mut up, mut down) = (0.0, 0.0);
        for ((name, color), v) in COMPONENTS.iter().zip([c, w, i]) {
            let (top, bottom) = if *v >= 0.0 {
                up += v;
                (up, up - v)
            } else {
                down += v;
                (down - v, down)
            };
            let _ = writeln!(
                s,
                r#"<rect class="bar" data-period="{}" data-component="{name}" data-value="{v:e}" x="{x0:.2}" y="{:.2}" width="{bar_w:.2}" height="{:.2}" fill="{color}"/>"#,
                esc(label),
                y(top),
                y(bottom) - y(top)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            x0 + bar_w / 2.0,
            HEIGHT - MARGIN + 14.0,
            esc(label)
        );
    }
    let points: Vec<String> = rows
        .iter()
        .enumerate()
        .map(|(k, r)| format!("{:.2},{:.2}", MARGIN + slot * (k as f64 + 0.5), y(r.4)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline class="total" fill="none" stroke="#222" stroke-width="2" points="{}"/>"##,
        points.join(" ")
    );
    for (k, (label, .., total)) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r##"<circle class="total" data-period="{}" data-value="{total:e}" cx="{:.2}" cy="{:.2}" r="3" fill="#222"/>"##,
            esc(label),
            MARGIN + slot * (k as f64 + 0.5),
            y(*total)
        );
    }
    for (k, (name, color)) in COMPONENTS.iter().enumerate() {
        let lx = MARGIN + 130.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#,
            HEIGHT - 22.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{name}</text>"#,
            lx + 14.0,
            HEIGHT - 13.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Horizontal bars of explained contribution per block, largest first.
pub fn ob_svg(title: &str, r: &ObResult) -> String {
    let mut blocks: Vec<_> = r.blocks.iter().collect();
    blocks.sort_by(|a, b| {
        b.contribution
            .abs()
            .total_cmp(&a.contribution.abs())
            .then_with(|| a.block.cmp(&b.block))
    });
    let lo = blocks.iter().map(|b| b.contribution).fold(0.0, f64::min);
    let hi = blocks.iter().map(|b| b.contribution).fold(0.0, f64::max);
    let (xmin, xmax, step) = axis(lo, hi);
    let left = MARGIN + 100.0;
    let plot_w = WIDTH - left - MARGIN;
    let x = |v: f64| left + (v - xmin) / (xmax - xmin) * plot_w;
    let slot = (HEIGHT - 2.0 * MARGIN) / blocks.len().max(1) as f64;

    let mut s = svg_open(title);
    let mut v = xmin;
    while v <= xmax + step * 1e-9 {
        let _ = writeln!(
            s,
            r##"<line class="tick" x1="{0:.2}" x2="{0:.2}" y1="{1:.2}" y2="{2:.2}" stroke="#ddd"/><text x="{0:.2}" y="{3:.2}" font-size="10" text-anchor="middle">{4}</text>"##,
            x(v),
            MARGIN,
            HEIGHT - MARGIN,
            HEIGHT - MARGIN + 14.0,
            tick_label(v, step)
        );
        v += step;
    }
    for (k, b) in blocks.iter().enumerate() {
        let yy = MARGIN + slot * k as f64 + slot * 0.2;
        let (x0, x1) = if b.contribution >= 0.0 {
            (x(0.0), x(b.contribution))
        } else {
            (x(b.contribution), x(0.0))
        };
        let _ = writeln!(
            s,
            r##"<rect class="bar" data-block="{}" data-value="{:e}" x="{x0:.2}" y="{yy:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0"/>"##,
            esc(&b.block),
            b.contribution,
            x1 - x0,
            slot * 0.6
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            left - 6.0,
            yy + slot * 0.4,
            esc(&b.block)
        );
    }
    let _ = writeln!(
        s,
        r##"<line x1="{0:.2}" x2="{0:.2}" y1="{1:.2}" y2="{2:.2}" stroke="#222"/>"##,
        x(0.0),
        MARGIN,
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text class="summary" data-explained="{:e}" data-unexplained="{:e}" x="{left:.2}" y="{:.2}" font-size="11">explained {:.4}, unexplained {:.4}</text>"#,
        r.explained,
        r.unexplained,
        HEIGHT - 16.0,
        r.explained,
        r.unexplained
    );
    s.push_str("</svg>\n");
    s
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        esc(title)
    );
    s
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let v = if v.abs() < step * 1e-9 { 0.0 } else { v };
    format!("{v:.decimals$}")
}

fn y_axis(s: &mut String, ymin: f64, ymax: f64, step: f64, y: &impl Fn(f64) -> f64) {
    let mut v = ymin;
    while v <= ymax + step * 1e-9 {
        let _ = writeln!(
            s,
            r##"<line class="tick" x1="{MARGIN}" x2="{:.2}" y1="{1:.2}" y2="{1:.2}" stroke="{2}"/><text x="{3:.2}" y="{4:.2}" font-size="10" text-anchor="end">{5}</text>"##,
            WIDTH - MARGIN,
            y(v),
            if v.abs() < step * 1e-9 {
                "#222"
            } else {
                "#ddd"
            },
            MARGIN - 6.0,
            y(v) + 3.0,
            tick_label(v, step)
        );
        v += step;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitagawa::tests::{p0, p1, panel_of};
    use crate::kitagawa::{threefold, SupportMode};
    use crate::oaxaca::{ob_twofold, CovariateBlocks};
    use crate::records::PostingMeta;
    use crate::synth::random_ob_cells;

    fn row(occ: &str, sen: Seniority, ind: &str, beta: f64) -> ExposureRow {
        let meta = PostingMeta {
            occupation: occ.into(),
            seniority: sen,
            industry: ind.into(),
            date: chrono::NaiveDate::from_ymd_opt(2022, 2, 1),
            ..PostingMeta::default()
        };
        // beta = e1 + e2/2 with e1 = beta, e2 = 0 keeps the arithmetic exact.
        let mut r = ExposureRow::from_parts(occ, &meta, &[(1, crate::exposure::ExposureLabel::E0)])
            .unwrap();
        r.e0 = 1.0 - beta;
        r.e1 = beta;
        r.alpha = beta;
        r.beta = beta;
        r.gamma = beta;
        r
    }

    #[test]
    fn formatted_and_raw_csv() {
        let mut t = Table::new(&["name", "x", "n"]);
        t.push(row!["a,b", 1.0 / 3.0, 7usize]);
        assert_eq!(t.to_csv(false), "name,x,n\n\"a,b\",0.3333,7\n");
        let raw = t.to_csv(true);
        let parsed: f64 = raw
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(2)
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(parsed, 1.0 / 3.0);
    }

    #[test]
    fn two_cell_table_row() {
        let panel = panel_of(&[
            (p0(), "A", "51", 0.5, 0.4),
            (p0(), "B", "51", 0.5, 0.2),
            (p1(), "A", "51", 0.3, 0.5),
            (p1(), "B", "51", 0.7, 0.1),
        ]);
        let r = threefold(&panel, &p0(), &p1(), SupportMode::Common).unwrap();
        let t = decomposition_table(&[r]);
        let csv = t.to_csv(false);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "2022Q1,-0.0800,-0.0400,0.0000,-0.0400,0.0000,2,0"
        );
        assert!(t.column("check").unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn svg_is_deterministic_and_carries_values() {
        let rows = vec![
            ("2022Q1".to_string(), -0.04, 0.0, -0.04, -0.08),
            ("2022Q2".to_string(), 0.01, 0.02, -0.005, 0.025),
        ];
        let a = decomposition_svg("change", &rows);
        assert_eq!(a, decomposition_svg("change", &rows));
        assert!(
            a.contains(r#"data-period="2022Q1" data-component="composition" data-value="-4e-2""#)
        );
        assert!(a.contains(r#"class="total" data-period="2022Q2" data-value="2.5e-2""#));
        assert_eq!(a.matches("class=\"bar\"").count(), 6);
    }

    #[test]
    fn ob_tables_sorted_and_summing() {
        let cells = random_ob_cells(4, &[5, 3, 2], 60);
        let blocks =
            CovariateBlocks::from_cells(&["occupation", "remote", "internship"], &cells).unwrap();
        let r = ob_twofold(&cells, &blocks).unwrap();
        let t = ob_block_table(&r);
        let v = t.column("contribution").unwrap();
        assert!(v.windows(2).all(|w| w[0].abs() >= w[1].abs()));
        assert!((v.iter().sum::<f64>() - r.explained).abs() < 1e-12);
        let svg = ob_svg("ob", &r);
        assert_eq!(svg.matches("class=\"bar\"").count(), 3);
        assert!(svg.contains(&format!("data-explained=\"{:e}\"", r.explained)));
    }

    #[test]
    fn describe_tables() {
        let rows = vec![
            row("11-1011.00", Seniority::Junior, "521110", 0.2),
            row("11-1011.00", Seniority::Senior, "522110", 0.6),
            row("15-1252.00", Seniority::Intermediate, "311000", 0.5),
            row("15-1252.00", Seniority::Intermediate, "331000", 0.3),
        ];
        let s = sector_table(&rows, IndexChoice::Beta);
        assert_eq!(s.rows[0][0], Value::from("31-33"));
        assert_eq!(s.rows[0][1], Value::from("Manufacturing"));
        assert!(s
            .column("mean")
            .unwrap()
            .iter()
            .all(|m| (m - 0.4).abs() < 1e-12));
        let sum = summary_table(&rows);
        let beta = &sum.rows[4];
        assert!(matches!(beta[1], Value::Num(m) if (m - 0.4).abs() < 1e-12));
        assert!(matches!(beta[2], Value::Num(sd) if (sd - (0.1f64 / 3.0).sqrt()).abs() < 1e-12));
        assert_eq!(beta[3], Value::Num(0.2));
        assert_eq!(sum.rows[6][1], Value::Int(4));
        let tb = top_bottom_table(&rows, IndexChoice::Beta, 1);
        assert_eq!(tb.rows.len(), 2);
        let trend = seniority_trend_table(&rows, &PanelSpec::default(), IndexChoice::Beta);
        assert_eq!(trend.rows.len(), 1);
        assert!((trend.column("intermediate").unwrap()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn axis_includes_zero_and_data() {
        let (lo, hi, step) = axis(0.013, 0.087);
        assert_eq!(lo, 0.0);
        assert!(hi >= 0.087 && step > 0.0);
        let (lo, hi, _) = axis(0.0, 0.0);
        assert!(lo < 0.0 && hi > 0.0);
    }
}
