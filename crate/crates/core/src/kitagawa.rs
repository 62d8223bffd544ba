//! Three-fold shift-share decomposition of aggregate exposure change and
//! its variants.
//!
//! Every variant reduces to aligned arrays `(w0, e0, wt, et)` over a cell
//! set and evaluates
//! `C = Σ Δw e0`, `W = Σ w0 Δe`, `I = Σ Δw Δe`,
//! with the total computed separately as `Σ wt et − Σ w0 e0`.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::panel::{
    common_support, AlignedCells, CellPanel, PanelError, PeriodId, Seniority, SupportDiagnostics,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecompError {
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("baseline period {0} is not in the panel")]
    MissingBaseline(PeriodId),
    #[error("no cell is observed in every period")]
    EmptyBalancedSet,
    #[error("sector {0} has postings in {1} but none in the baseline")]
    SectorMissingInBaseline(String, PeriodId),
    #[error("all components are zero over the selected periods")]
    AllZeroComponents,
}

/// How cells observed in only one of the two periods are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SupportMode {
    /// Restrict to cells seen in both periods and renormalize shares there.
    #[default]
    Common,
    /// Keep raw shares; cells seen in only one period are dropped with a warning.
    Raw,
}

/// Compensated (Neumaier) summation.
pub(crate) fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Components {
    pub total: f64,
    pub composition: f64,
    pub within: f64,
    pub interaction: f64,
}

impl Components {
    pub const ZERO: Components = Components {
        total: 0.0,
        composition: 0.0,
        within: 0.0,
        interaction: 0.0,
    };

    fn of(a: &AlignedCells) -> Self {
        let n = a.cells.len();
        let dw = |i: usize| a.w_cur[i] - a.w_base[i];
        let de = |i: usize| a.e_cur[i] - a.e_base[i];
        let level = |w: &[f64], e: &[f64]| fsum(w.iter().zip(e).map(|(w, e)| w * e));
        Components {
            total: level(&a.w_cur, &a.e_cur) - level(&a.w_base, &a.e_base),
            composition: fsum((0..n).map(|i| dw(i) * a.e_base[i])),
            within: fsum((0..n).map(|i| a.w_base[i] * de(i))),
            interaction: fsum((0..n).map(|i| dw(i) * de(i))),
        }
    }

    pub fn reconstruction_gap(&self) -> f64 {
        self.composition + self.within + self.interaction - self.total
    }

    fn scaled_add(&mut self, weight: f64, other: &Components) {
        self.total += weight * other.total;
        self.composition += weight * other.composition;
        self.within += weight * other.within;
        self.interaction += weight * other.interaction;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompResult {
    pub period: PeriodId,
    pub total: f64,
    pub composition: f64,
    pub within: f64,
    pub interaction: f64,
    /// `C + W + I − total` as evaluated.
    pub reconstruction_gap: f64,
    pub n_cells: usize,
    /// Cells present in only one of the two periods and therefore unused.
    pub excluded_cells: usize,
    pub diagnostics: SupportDiagnostics,
    pub warnings: Vec<String>,
}

impl DecompResult {
    fn new(
        period: PeriodId,
        c: Components,
        n_cells: usize,
        diagnostics: SupportDiagnostics,
    ) -> Self {
        DecompResult {
            period,
            total: c.total,
            composition: c.composition,
            within: c.within,
            interaction: c.interaction,
            reconstruction_gap: c.reconstruction_gap(),
            n_cells,
            excluded_cells: 0,
            diagnostics,
            warnings: Vec::new(),
        }
    }

    pub fn components(&self) -> Components {
        Components {
            total: self.total,
            composition: self.composition,
            within: self.within,
            interaction: self.interaction,
        }
    }
}

fn indices(
    panel: &CellPanel,
    base: &PeriodId,
    t: &PeriodId,
) -> Result<(usize, usize), DecompError> {
    let b = panel
        .period_index(base)
        .map_err(|_| DecompError::MissingBaseline(*base))?;
    Ok((b, panel.period_index(t)?))
}

/// Union of cells present in either period.
fn union_count(panel: &CellPanel, b: usize, k: usize) -> usize {
    (0..panel.cells().len())
        .filter(|&c| panel.stat(b, c).is_some() || panel.stat(k, c).is_some())
        .count()
}

/// Cells aligned for one (baseline, t) pair under the chosen support mode.
fn aligned(
    panel: &CellPanel,
    base: &PeriodId,
    t: &PeriodId,
    mode: SupportMode,
) -> Result<(AlignedCells, SupportDiagnostics, usize), DecompError> {
    let (b, k) = indices(panel, base, t)?;
    let cs = common_support(panel, base, t)?;
    let excluded = union_count(panel, b, k) - cs.aligned.cells.len();
    let cells = match mode {
        SupportMode::Common => cs.aligned,
        SupportMode::Raw => {
            let mut raw = cs.aligned;
            for (i, &c) in raw.cells.iter().enumerate() {
                raw.w_base[i] = panel.stat(b, c).expect("support cell").share;
                raw.w_cur[i] = panel.stat(k, c).expect("support cell").share;
            }
            raw
        }
    };
    Ok((cells, cs.diagnostics, excluded))
}

pub fn threefold(
    panel: &CellPanel,
    base: &PeriodId,
    t: &PeriodId,
    mode: SupportMode,
) -> Result<DecompResult, DecompError> {
    let (cells, diag, excluded) = aligned(panel, base, t, mode)?;
    let mut r = DecompResult::new(*t, Components::of(&cells), cells.cells.len(), diag);
    r.excluded_cells = excluded;
    if mode == SupportMode::Raw && excluded > 0 {
        r.warnings.push(format!(
            "{excluded} cells observed in only one period were excluded"
        ));
    }
    Ok(r)
}

/// Every non-baseline period, decomposed against the baseline.
pub fn threefold_all(
    panel: &CellPanel,
    base: &PeriodId,
    mode: SupportMode,
) -> Result<Vec<DecompResult>, DecompError> {
    indices(panel, base, base)?;
    panel
        .periods()
        .par_iter()
        .filter(|p| *p != base)
        .map(|t| threefold(panel, base, t, mode))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwofoldResult {
    pub period: PeriodId,
    pub total: f64,
    pub composition: f64,
    pub within: f64,
}

/// Interaction absorbed half into each margin:
/// `Σ Δw (e0 + et)/2` and `Σ Δe (w0 + wt)/2`.
pub fn twofold_symmetric(
    panel: &CellPanel,
    base: &PeriodId,
    t: &PeriodId,
    mode: SupportMode,
) -> Result<TwofoldResult, DecompError> {
    let (a, _, _) = aligned(panel, base, t, mode)?;
    let n = a.cells.len();
    let composition =
        fsum((0..n).map(|i| (a.w_cur[i] - a.w_base[i]) * (a.e_cur[i] + a.e_base[i]) / 2.0));
    let within =
        fsum((0..n).map(|i| (a.e_cur[i] - a.e_base[i]) * (a.w_cur[i] + a.w_base[i]) / 2.0));
    Ok(TwofoldResult {
        period: *t,
        total: a.level_cur() - a.level_base(),
        composition,
        within,
    })
}

/// Restrict to cells observed in the baseline and every listed period,
/// renormalize within that set, then decompose each period.
pub fn balanced(
    panel: &CellPanel,
    base: &PeriodId,
    periods: &[PeriodId],
) -> Result<Vec<DecompResult>, DecompError> {
    let b = indices(panel, base, base)?.0;
    let ks: Vec<usize> = periods
        .iter()
        .map(|p| panel.period_index(p))
        .collect::<Result<_, _>>()?;
    let cells: Vec<usize> = (0..panel.cells().len())
        .filter(|&c| panel.stat(b, c).is_some() && ks.iter().all(|&k| panel.stat(k, c).is_some()))
        .collect();
    if cells.is_empty() {
        return Err(DecompError::EmptyBalancedSet);
    }
    periods
        .par_iter()
        .zip(ks.par_iter())
        .map(|(t, &k)| {
            let (a, m_base, m_cur) = AlignedCells::gather(panel, b, k, cells.clone());
            let (raw_base, raw_cur) = (panel.level(b), panel.level(k));
            let c = Components::of(&a);
            let raw = raw_cur - raw_base;
            let diag = SupportDiagnostics {
                period: *t,
                m_cur,
                m_base,
                gap: raw_cur - a.level_cur(),
                raw_total_change: raw,
                renorm_total_change: c.total,
                residual: raw - c.total,
            };
            let mut r = DecompResult::new(*t, c, cells.len(), diag);
            r.excluded_cells = union_count(panel, b, k) - cells.len();
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectorDecomp {
    pub sector: String,
    /// Baseline share of postings in the sector, fixed across periods.
    pub weight: f64,
    pub components: Components,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WithinSectorResult {
    pub period: PeriodId,
    pub aggregate: Components,
    pub sectors: Vec<SectorDecomp>,
    pub warnings: Vec<String>,
}

/// Decompose inside each sector on its own common support, then combine
/// sector components with fixed baseline sector shares.
pub fn within_sector(
    panel: &CellPanel,
    base: &PeriodId,
    t: &PeriodId,
) -> Result<WithinSectorResult, DecompError> {
    let (b, k) = indices(panel, base, t)?;
    let sectors: BTreeSet<&str> = (0..panel.cells().len())
        .filter(|&c| panel.stat(b, c).is_some() || panel.stat(k, c).is_some())
        .map(|c| panel.cells()[c].industry.as_str())
        .collect();
    let mut out = WithinSectorResult {
        period: *t,
        aggregate: Components::ZERO,
        sectors: Vec::new(),
        warnings: Vec::new(),
    };
    for s in sectors {
        let in_sector: Vec<usize> = (0..panel.cells().len())
            .filter(|&c| panel.cells()[c].industry == s)
            .collect();
        let weight = fsum(
            in_sector
                .iter()
                .filter_map(|&c| panel.stat(b, c))
                .map(|st| st.share),
        );
        if weight == 0.0 {
            return Err(DecompError::SectorMissingInBaseline(s.to_string(), *t));
        }
        let support: Vec<usize> = in_sector
            .into_iter()
            .filter(|&c| panel.stat(b, c).is_some() && panel.stat(k, c).is_some())
            .collect();
        let (components, n_cells) = if support.is_empty() {
            out.warnings.push(format!(
                "sector {s} has no common-support cells in {t}; contributes zero"
            ));
            (Components::ZERO, 0)
        } else {
            let n = support.len();
            (
                Components::of(&AlignedCells::gather(panel, b, k, support).0),
                n,
            )
        };
        out.aggregate.scaled_add(weight, &components);
        out.sectors.push(SectorDecomp {
            sector: s.to_string(),
            weight,
            components,
            n_cells,
        });
    }
    Ok(out)
}

/// Decompose each seniority stratum separately, shares renormalized within the stratum.
pub fn by_seniority(
    panel: &CellPanel,
    base: &PeriodId,
    mode: SupportMode,
) -> Result<Vec<(Seniority, Vec<DecompResult>)>, DecompError> {
    let present: BTreeSet<Seniority> = panel.cells().iter().map(|c| c.seniority).collect();
    present
        .into_iter()
        .map(|s| {
            let stratum = panel.restrict(|c| c.seniority == s)?;
            Ok((s, threefold_all(&stratum, base, mode)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignPatternBreakdown {
    pub period: PeriodId,
    /// Share fell, exposure rose.
    pub neg_pos: f64,
    /// Share rose, exposure fell.
    pub pos_neg: f64,
    pub pos_pos: f64,
    pub neg_neg: f64,
    /// Cells with no share or no exposure change; contributes exactly 0.
    pub zero_change: f64,
    pub interaction: f64,
}

impl SignPatternBreakdown {
    pub fn bucket_sum(&self) -> f64 {
        self.neg_pos + self.pos_neg + self.pos_pos + self.neg_neg + self.zero_change
    }
}

pub fn sign_patterns(
    panel: &CellPanel,
    base: &PeriodId,
    t: &PeriodId,
    mode: SupportMode,
) -> Result<SignPatternBreakdown, DecompError> {
    let (a, _, _) = aligned(panel, base, t, mode)?;
    let mut buckets: [Vec<f64>; 5] = Default::default();
    for i in 0..a.cells.len() {
        let dw = a.w_cur[i] - a.w_base[i];
        let de = a.e_cur[i] - a.e_base[i];
        let slot = if dw == 0.0 || de == 0.0 {
            4
        } else {
            match (dw > 0.0, de > 0.0) {
                (false, true) => 0,
                (true, false) => 1,
                (true, true) => 2,
                (false, false) => 3,
            }
        };
        buckets[slot].push(dw * de);
    }
    let [np, pn, pp, nn, zero] = buckets.map(fsum);
    Ok(SignPatternBreakdown {
        period: *t,
        neg_pos: np,
        pos_neg: pn,
        pos_pos: pp,
        neg_neg: nn,
        zero_change: zero,
        interaction: Components::of(&a).interaction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contributions {
    pub from: PeriodId,
    pub periods: usize,
    pub composition: f64,
    pub within: f64,
    pub interaction: f64,
}

/// Percent of summed absolute movement attributable to each margin over
/// periods at or after `from`.
pub fn relative_contributions(
    results: &[DecompResult],
    from: &PeriodId,
) -> Result<Contributions, DecompError> {
    let used: Vec<&DecompResult> = results.iter().filter(|r| r.period >= *from).collect();
    let c = fsum(used.iter().map(|r| r.composition.abs()));
    let w = fsum(used.iter().map(|r| r.within.abs()));
    let i = fsum(used.iter().map(|r| r.interaction.abs()));
    let denom = c + w + i;
    if !(denom > 0.0) {
        return Err(DecompError::AllZeroComponents);
    }
    Ok(Contributions {
        from: *from,
        periods: used.len(),
        composition: 100.0 * c / denom,
        within: 100.0 * w / denom,
        interaction: 100.0 * i / denom,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CounterfactualPath {
    pub period: PeriodId,
    /// `Σ w̃t et` on common support.
    pub observed: f64,
    /// Full-sample level, for reference.
    pub observed_raw: f64,
    /// `Σ w̃t e0`: shares move, exposures held at baseline.
    pub composition_only: f64,
    /// `Σ w̃0 et`: exposures move, shares held at baseline.
    pub within_only: f64,
    /// `Σ w̃0 e0` on the same support.
    pub baseline_level: f64,
}

pub fn counterfactual_paths(
    panel: &CellPanel,
    base: &PeriodId,
    periods: &[PeriodId],
) -> Result<Vec<CounterfactualPath>, DecompError> {
    indices(panel, base, base)?;
    periods
        .par_iter()
        .map(|t| {
            let (a, _, _) = aligned(panel, base, t, SupportMode::Common)?;
            let dot = |w: &[f64], e: &[f64]| fsum(w.iter().zip(e).map(|(w, e)| w * e));
            Ok(CounterfactualPath {
                period: *t,
                observed: dot(&a.w_cur, &a.e_cur),
                observed_raw: panel.level(panel.period_index(t)?),
                composition_only: dot(&a.w_cur, &a.e_base),
                within_only: dot(&a.w_base, &a.e_cur),
                baseline_level: dot(&a.w_base, &a.e_base),
            })
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::panel::{PanelRow, Seniority};
    use proptest::prelude::*;

    /// Panel from `(period, cell name, share, mean)` with shares given directly.
    pub(crate) fn panel_of(entries: &[(PeriodId, &str, &str, f64, f64)]) -> CellPanel {
        let rows: Vec<PanelRow> = entries
            .iter()
            .map(|&(period, occ, ind, share, mean)| PanelRow {
                occupation: occ.into(),
                seniority: Seniority::Intermediate,
                industry: ind.into(),
                period,
                count: 1,
                share,
                mean_exposure: mean,
            })
            .collect();
        CellPanel::from_rows(&rows).unwrap()
    }

    pub(crate) fn p0() -> PeriodId {
        PeriodId::year(2021)
    }

    pub(crate) fn p1() -> PeriodId {
        PeriodId::quarter(2022, 1)
    }

    fn two_cell() -> CellPanel {
        panel_of(&[
            (p0(), "A", "51", 0.5, 0.4),
            (p0(), "B", "51", 0.5, 0.2),
            (p1(), "A", "51", 0.3, 0.5),
            (p1(), "B", "51", 0.7, 0.1),
        ])
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn hand_instance() {
        let r = threefold(&two_cell(), &p0(), &p1(), SupportMode::Common).unwrap();
        assert!(close(r.total, -0.08), "{r:?}");
        assert!(close(r.composition, -0.04));
        assert!(close(r.within, 0.0));
        assert!(close(r.interaction, -0.04));
        assert!(r.reconstruction_gap.abs() < 1e-15);

        let t = twofold_symmetric(&two_cell(), &p0(), &p1(), SupportMode::Common).unwrap();
        assert!(close(t.composition, -0.06) && close(t.within, -0.02) && close(t.total, -0.08));

        let s = sign_patterns(&two_cell(), &p0(), &p1(), SupportMode::Common).unwrap();
        assert!(close(s.neg_pos, -0.02) && close(s.pos_neg, -0.02));
        assert_eq!((s.pos_pos, s.neg_neg, s.zero_change), (0.0, 0.0, 0.0));

        let c = relative_contributions(&[r], &p1()).unwrap();
        assert!(close(c.composition, 50.0) && close(c.within, 0.0) && close(c.interaction, 50.0));
    }

    #[test]
    fn pure_margins() {
        let redesign = panel_of(&[
            (p0(), "A", "51", 0.5, 0.4),
            (p0(), "B", "51", 0.5, 0.2),
            (p1(), "A", "51", 0.5, 0.6),
            (p1(), "B", "51", 0.5, 0.1),
        ]);
        let r = threefold(&redesign, &p0(), &p1(), SupportMode::Common).unwrap();
        assert_eq!((r.composition, r.interaction), (0.0, 0.0));
        assert!(close(r.total, r.within));

        let realloc = panel_of(&[
            (p0(), "A", "51", 0.5, 0.4),
            (p0(), "B", "51", 0.5, 0.2),
            (p1(), "A", "51", 0.2, 0.4),
            (p1(), "B", "51", 0.8, 0.2),
        ]);
        let r = threefold(&realloc, &p0(), &p1(), SupportMode::Common).unwrap();
        assert_eq!((r.within, r.interaction), (0.0, 0.0));
        assert!(close(r.total, r.composition));
        let s = sign_patterns(&realloc, &p0(), &p1(), SupportMode::Common).unwrap();
        assert_eq!(s.bucket_sum(), 0.0);
    }

    #[test]
    fn raw_mode_excludes_one_sided_cells() {
        let churn = panel_of(&[
            (p0(), "A", "51", 0.5, 0.4),
            (p0(), "B", "51", 0.5, 0.2),
            (p1(), "B", "51", 0.6, 0.3),
            (p1(), "C", "51", 0.4, 0.9),
        ]);
        let raw = threefold(&churn, &p0(), &p1(), SupportMode::Raw).unwrap();
        assert_eq!((raw.n_cells, raw.excluded_cells), (1, 2));
        assert_eq!(raw.warnings.len(), 1);
        assert!(close(raw.total, 0.6 * 0.3 - 0.5 * 0.2));
        let cs = threefold(&churn, &p0(), &p1(), SupportMode::Common).unwrap();
        assert!(close(cs.total, 0.1));
        assert!(close(
            cs.diagnostics.residual,
            cs.diagnostics.raw_total_change - cs.diagnostics.renorm_total_change
        ));
        assert!(cs.warnings.is_empty());
    }

    #[test]
    fn balanced_drops_cells_missing_anywhere() {
        let p2 = PeriodId::quarter(2022, 2);
        let panel = panel_of(&[
            (p0(), "A", "51", 0.4, 0.4),
            (p0(), "B", "51", 0.4, 0.2),
            (p0(), "C", "51", 0.2, 0.3),
            (p1(), "A", "51", 0.5, 0.5),
            (p1(), "B", "51", 0.5, 0.1),
            (p2, "A", "51", 0.3, 0.5),
            (p2, "B", "51", 0.3, 0.1),
            (p2, "C", "51", 0.4, 0.6),
        ]);
        let bal = balanced(&panel, &p0(), &[p1(), p2]).unwrap();
        assert!(bal.iter().all(|r| r.n_cells == 2));
        assert_eq!(bal[1].excluded_cells, 1);
        let cs = threefold(&panel, &p0(), &p1(), SupportMode::Common).unwrap();
        assert!(close(bal[0].total, cs.total));
        let bad = panel_of(&[(p0(), "A", "51", 1.0, 0.1), (p1(), "B", "51", 1.0, 0.1)]);
        assert_eq!(
            balanced(&bad, &p0(), &[p1()]),
            Err(DecompError::EmptyBalancedSet)
        );
    }

    #[test]
    fn within_sector_cases() {
        let single = within_sector(&two_cell(), &p0(), &p1()).unwrap();
        let three = threefold(&two_cell(), &p0(), &p1(), SupportMode::Common).unwrap();
        assert!(close(single.aggregate.composition, three.composition));
        assert!(close(single.aggregate.interaction, three.interaction));

        // Sector sizes move, mixes and exposures inside each sector do not.
        let cross = panel_of(&[
            (p0(), "A", "11", 0.3, 0.4),
            (p0(), "B", "11", 0.3, 0.2),
            (p0(), "C", "22", 0.4, 0.7),
            (p1(), "A", "11", 0.1, 0.4),
            (p1(), "B", "11", 0.1, 0.2),
            (p1(), "C", "22", 0.8, 0.7),
        ]);
        let ws = within_sector(&cross, &p0(), &p1()).unwrap();
        let agg = ws.aggregate;
        assert!(
            agg.composition.abs() < 1e-12
                && agg.within.abs() < 1e-12
                && agg.interaction.abs() < 1e-12
        );
        assert!(
            threefold(&cross, &p0(), &p1(), SupportMode::Common)
                .unwrap()
                .composition
                .abs()
                > 0.1
        );

        // Internal redesign only: aggregate W is the fixed-weight mix of sector Ws.
        let redesign = panel_of(&[
            (p0(), "A", "11", 0.6, 0.4),
            (p0(), "C", "22", 0.4, 0.7),
            (p1(), "A", "11", 0.5, 0.5),
            (p1(), "C", "22", 0.5, 0.6),
        ]);
        let ws = within_sector(&redesign, &p0(), &p1()).unwrap();
        assert!(close(ws.aggregate.within, 0.6 * 0.1 + 0.4 * -0.1));
        assert_eq!(
            ws.sectors.iter().map(|s| s.weight).collect::<Vec<_>>(),
            vec![0.6, 0.4]
        );

        let newcomer = panel_of(&[
            (p0(), "A", "11", 1.0, 0.4),
            (p1(), "A", "11", 0.5, 0.5),
            (p1(), "Z", "99", 0.5, 0.5),
        ]);
        assert!(matches!(
            within_sector(&newcomer, &p0(), &p1()),
            Err(DecompError::SectorMissingInBaseline(s, _)) if s == "99"
        ));
    }

    #[test]
    fn counterfactual_identities() {
        let panel = two_cell();
        let paths = counterfactual_paths(&panel, &p0(), &[p0(), p1()]).unwrap();
        let b = paths[0];
        assert!(close(b.observed, b.composition_only) && close(b.observed, b.within_only));
        assert!(close(b.observed, panel.level(0)));
        let r = threefold(&panel, &p0(), &p1(), SupportMode::Common).unwrap();
        assert!(close(paths[1].observed - paths[1].baseline_level, r.total));
        assert!(close(
            paths[1].composition_only - paths[1].baseline_level,
            r.composition
        ));
        assert!(close(
            paths[1].within_only - paths[1].baseline_level,
            r.within
        ));
    }

    #[test]
    fn contribution_edge_cases() {
        let r = threefold(&two_cell(), &p0(), &p1(), SupportMode::Common).unwrap();
        let mut eq = r.clone();
        (eq.composition, eq.within, eq.interaction) = (0.1, -0.1, 0.1);
        let c = relative_contributions(&[eq], &p1()).unwrap();
        assert!(close(c.composition, 100.0 / 3.0) && close(c.within, 100.0 / 3.0));
        assert_eq!(
            relative_contributions(&[r], &PeriodId::quarter(2030, 1)),
            Err(DecompError::AllZeroComponents)
        );
    }

    #[test]
    fn missing_baseline() {
        assert_eq!(
            threefold(
                &two_cell(),
                &PeriodId::year(2019),
                &p1(),
                SupportMode::Common
            ),
            Err(DecompError::MissingBaseline(PeriodId::year(2019)))
        );
    }

    fn random_panel() -> impl Strategy<Value = CellPanel> {
        prop::collection::vec(
            (0.01f64..1.0, 0.0f64..1.0, 0.01f64..1.0, 0.0f64..1.0, 0u8..4),
            1..40,
        )
        .prop_map(|mut cells| {
            // Keep one cell in both periods so neither period is empty.
            cells[0].4 = 0;
            let mut entries = Vec::new();
            let names: Vec<String> = (0..cells.len()).map(|i| format!("c{i:02}")).collect();
            let (mut t0, mut t1) = (0.0, 0.0);
            for (&(w0, _, w1, _, mask), _) in cells.iter().zip(&names) {
                t0 += if mask != 1 { w0 } else { 0.0 };
                t1 += if mask != 2 { w1 } else { 0.0 };
            }
            for (&(w0, e0, w1, e1, mask), name) in cells.iter().zip(&names) {
                let sector = if name.ends_with(['0', '1', '2']) {
                    "11"
                } else {
                    "22"
                };
                if mask != 1 {
                    entries.push((p0(), name.as_str(), sector, w0 / t0, e0));
                }
                if mask != 2 {
                    entries.push((p1(), name.as_str(), sector, w1 / t1, e1));
                }
            }
            let rows: Vec<PanelRow> = entries
                .iter()
                .map(|&(period, occ, ind, share, mean)| PanelRow {
                    occupation: occ.into(),
                    seniority: Seniority::Intermediate,
                    industry: ind.into(),
                    period,
                    count: 1,
                    share,
                    mean_exposure: mean,
                })
                .collect();
            CellPanel::from_rows(&rows).unwrap()
        })
    }

    proptest! {
        #[test]
        fn identities_hold(panel in random_panel()) {
            let Ok(r) = threefold(&panel, &p0(), &p1(), SupportMode::Common) else { return Ok(()) };
            prop_assert!(r.reconstruction_gap.abs() < 1e-12);
            let t = twofold_symmetric(&panel, &p0(), &p1(), SupportMode::Common).unwrap();
            prop_assert!((t.composition - (r.composition + r.interaction / 2.0)).abs() < 1e-12);
            prop_assert!((t.within - (r.within + r.interaction / 2.0)).abs() < 1e-12);
            let s = sign_patterns(&panel, &p0(), &p1(), SupportMode::Common).unwrap();
            prop_assert!((s.bucket_sum() - r.interaction).abs() < 1e-12);
            prop_assert_eq!(s.zero_change, 0.0);
            let d = r.diagnostics;
            prop_assert!((0.0..=1.0).contains(&d.m_cur) && (0.0..=1.0).contains(&d.m_base));
            prop_assert!((d.residual - (d.raw_total_change - d.renorm_total_change)).abs() < 1e-12);
            let raw = threefold(&panel, &p0(), &p1(), SupportMode::Raw).unwrap();
            prop_assert!(raw.reconstruction_gap.abs() < 1e-12);
        }

        #[test]
        fn period_swap_negates_twofold(panel in random_panel()) {
            let (Ok(f), Ok(b)) = (
                twofold_symmetric(&panel, &p0(), &p1(), SupportMode::Common),
                twofold_symmetric(&panel, &p1(), &p0(), SupportMode::Common),
            ) else { return Ok(()) };
            prop_assert!((f.composition + b.composition).abs() < 1e-12);
            prop_assert!((f.within + b.within).abs() < 1e-12);
        }

        #[test]
        fn cell_order_does_not_matter(panel in random_panel()) {
            let Ok(r) = threefold(&panel, &p0(), &p1(), SupportMode::Common) else { return Ok(()) };
            let mut rows = panel.to_rows();
            rows.reverse();
            for row in &mut rows {
                row.occupation = format!("z{}", row.occupation.chars().rev().collect::<String>());
            }
            let shuffled = CellPanel::from_rows(&rows).unwrap();
            let s = threefold(&shuffled, &p0(), &p1(), SupportMode::Common).unwrap();
            prop_assert!((r.composition - s.composition).abs() < 1e-12);
            prop_assert!((r.within - s.within).abs() < 1e-12);
            prop_assert!((r.interaction - s.interaction).abs() < 1e-12);
        }
    }
}
