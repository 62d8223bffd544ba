//! Weighted Oaxaca-Blinder decomposition over categorical covariate blocks.
//!
//! Each group is fitted by weighted least squares on an intercept plus one
//! dummy per non-reference category. The gap in group means splits into an
//! explained part, `(X̄_B − X̄_A)' β̂_A`, and an unexplained remainder.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

use crate::exposure::IndexChoice;
use crate::panel::sector_code;
use crate::records::ExposureRow;

/// Relative pivot tolerance for dropping collinear columns.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Block names in the order used by [`cells_from_postings`].
pub const POSTING_BLOCKS: [&str; 7] = [
    "occupation",
    "industry",
    "seniority",
    "state",
    "remote",
    "internship",
    "employment_type",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObError {
    #[error("block {block}: unknown category {category:?}")]
    UnknownCategory { block: String, category: String },
    #[error("group {0} has no cells")]
    EmptyGroup(ObGroup),
    #[error("no column could be retained in the fit")]
    DegenerateSystem,
    #[error("cell has {found} categories, expected one per block ({expected})")]
    BlockArity { expected: usize, found: usize },
    #[error("invalid cell: {0}")]
    InvalidCell(String),
    #[error("block {block}: reference {reference:?} is not one of its categories")]
    InvalidReference { block: String, reference: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ObGroup {
    PreGpt,
    PostGpt,
}

impl fmt::Display for ObGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObGroup::PreGpt => "PreGpt",
            ObGroup::PostGpt => "PostGpt",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObCell {
    /// One category per block, in block order.
    pub categories: Vec<String>,
    pub group: ObGroup,
    pub weight: f64,
    pub outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub categories: Vec<String>,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateBlocks {
    pub blocks: Vec<Block>,
}

impl CovariateBlocks {
    /// Categories observed in `cells`, sorted; each block's reference is its
    /// highest-weight category in the PreGpt group, ties to the lower name.
    pub fn from_cells(names: &[&str], cells: &[ObCell]) -> Result<Self, ObError> {
        let mut seen: Vec<BTreeMap<&str, f64>> = vec![BTreeMap::new(); names.len()];
        for c in cells {
            if c.categories.len() != names.len() {
                return Err(ObError::BlockArity {
                    expected: names.len(),
                    found: c.categories.len(),
                });
            }
            for (b, cat) in c.categories.iter().enumerate() {
                let w = seen[b].entry(cat).or_default();
                if c.group == ObGroup::PreGpt {
                    *w += c.weight;
                }
            }
        }
        let blocks = names
            .iter()
            .zip(seen)
            .map(|(name, cats)| {
                let reference = cats
                    .iter()
                    .fold(None::<(&str, f64)>, |best, (&k, &w)| match best {
                        Some((_, bw)) if bw >= w => best,
                        _ => Some((k, w)),
                    })
                    .map(|(k, _)| k.to_string())
                    .unwrap_or_default();
                Block {
                    name: name.to_string(),
                    categories: cats.keys().map(|k| k.to_string()).collect(),
                    reference,
                }
            })
            .collect();
        Ok(CovariateBlocks { blocks })
    }

    pub fn set_reference(&mut self, block: usize, reference: &str) -> Result<(), ObError> {
        let b = &mut self.blocks[block];
        if !b.categories.iter().any(|c| c == reference) {
            return Err(ObError::InvalidReference {
                block: b.name.clone(),
                reference: reference.to_string(),
            });
        }
        b.reference = reference.to_string();
        Ok(())
    }

    /// Number of dummy columns: categories minus one reference per block.
    pub fn n_columns(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.categories.len().saturating_sub(1))
            .sum()
    }
}

/// Sparse dummy design: each row lists its active columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n_columns: usize,
    /// Block index of each column.
    pub column_block: Vec<usize>,
    /// `(block name, category)` of each column.
    pub column_labels: Vec<(String, String)>,
    pub rows: Vec<Vec<u32>>,
}

pub fn build_design(cells: &[ObCell], blocks: &CovariateBlocks) -> Result<Design, ObError> {
    let mut lookup: Vec<HashMap<&str, Option<u32>>> = Vec::with_capacity(blocks.blocks.len());
    let mut column_block = Vec::new();
    let mut column_labels = Vec::new();
    for (bi, b) in blocks.blocks.iter().enumerate() {
        if !b.categories.contains(&b.reference) {
            return Err(ObError::InvalidReference {
                block: b.name.clone(),
                reference: b.reference.clone(),
            });
        }
        let mut m = HashMap::with_capacity(b.categories.len());
        for cat in &b.categories {
            if *cat == b.reference {
                m.insert(cat.as_str(), None);
            } else {
                m.insert(cat.as_str(), Some(column_block.len() as u32));
                column_block.push(bi);
                column_labels.push((b.name.clone(), cat.clone()));
            }
        }
        lookup.push(m);
    }
    let rows = cells
        .iter()
        .map(|c| {
            if c.categories.len() != blocks.blocks.len() {
                return Err(ObError::BlockArity {
                    expected: blocks.blocks.len(),
                    found: c.categories.len(),
                });
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) || !c.outcome.is_finite() {
                return Err(ObError::InvalidCell(format!(
                    "weight {} outcome {}",
                    c.weight, c.outcome
                )));
            }
            let mut cols = Vec::with_capacity(c.categories.len());
            for (bi, cat) in c.categories.iter().enumerate() {
                match lookup[bi].get(cat.as_str()) {
                    Some(Some(col)) => cols.push(*col),
                    Some(None) => {}
                    None => {
                        return Err(ObError::UnknownCategory {
                            block: blocks.blocks[bi].name.clone(),
                            category: cat.clone(),
                        })
                    }
                }
            }
            Ok(cols)
        })
        .collect::<Result<_, _>>()?;
    Ok(Design {
        n_columns: column_block.len(),
        column_block,
        column_labels,
        rows,
    })
}

/// Weighted mean of every dummy column over the selected rows.
pub fn weighted_column_means(
    design: &Design,
    cells: &[ObCell],
    select: impl Fn(&ObCell) -> bool,
) -> Vec<f64> {
    let mut sums = vec![0.0; design.n_columns];
    let mut total = 0.0;
    for (row, c) in design.rows.iter().zip(cells) {
        if !select(c) {
            continue;
        }
        total += c.weight;
        for &col in row {
            sums[col as usize] += c.weight;
        }
    }
    sums.iter().map(|s| s / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WlsFit {
    pub intercept: f64,
    /// Dummy coefficients; dropped columns hold 0.
    pub coefficients: Vec<f64>,
    pub dropped: Vec<usize>,
    pub n_obs: usize,
    pub weight_sum: f64,
    /// Smallest and largest accepted Cholesky pivot (squared scale).
    pub min_pivot: f64,
    pub max_pivot: f64,
}

/// Weighted least squares on an intercept plus sparse 0/1 columns.
///
/// Normal equations are factored by Cholesky in column order with the
/// intercept first; a column whose residual pivot falls below
/// `PIVOT_TOLERANCE × max diagonal` is collinear with earlier ones and is
/// dropped. One step of iterative refinement follows the solve.
pub fn wls_fit(
    rows: &[&[u32]],
    outcomes: &[f64],
    weights: &[f64],
    n_columns: usize,
) -> Result<WlsFit, ObError> {
    let p = n_columns + 1;
    let mut a = vec![0.0f64; p * p];
    let mut rhs = vec![0.0f64; p];
    let mut idx = Vec::with_capacity(16);
    for ((row, &y), &w) in rows.iter().zip(outcomes).zip(weights) {
        idx.clear();
        idx.push(0usize);
        idx.extend(row.iter().map(|&c| c as usize + 1));
        for &i in &idx {
            rhs[i] += w * y;
            for &j in &idx {
                if j <= i {
                    a[i * p + j] += w;
                }
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            a[j * p + i] = a[i * p + j];
        }
    }

    let max_diag = (0..p).map(|i| a[i * p + i]).fold(0.0, f64::max);
    if !(max_diag > 0.0) {
        return Err(ObError::DegenerateSystem);
    }
    let tol = PIVOT_TOLERANCE * max_diag;
    let mut l = vec![0.0f64; p * p];
    let mut kept = vec![false; p];
    let (mut min_pivot, mut max_pivot) = (f64::INFINITY, 0.0f64);
    for i in 0..p {
        for j in 0..=i {
            if j < i && !kept[j] {
                continue;
            }
            let dot: f64 = l[i * p..i * p + j]
                .iter()
                .zip(&l[j * p..j * p + j])
                .map(|(x, y)| x * y)
                .sum();
            let s = a[i * p + j] - dot;
            if j < i {
                l[i * p + j] = s / l[j * p + j];
            } else if s > tol {
                kept[i] = true;
                l[i * p + i] = s.sqrt();
                min_pivot = min_pivot.min(s);
                max_pivot = max_pivot.max(s);
            } else {
                l[i * p..i * p + i].fill(0.0);
            }
        }
    }
    if !kept[0] {
        return Err(ObError::DegenerateSystem);
    }

    let solve = |b: &[f64]| -> Vec<f64> {
        let mut z = vec![0.0; p];
        for i in (0..p).filter(|&i| kept[i]) {
            let s: f64 = (0..i)
                .filter(|&k| kept[k])
                .map(|k| l[i * p + k] * z[k])
                .sum();
            z[i] = (b[i] - s) / l[i * p + i];
        }
        let mut x = vec![0.0; p];
        for i in (0..p).rev().filter(|&i| kept[i]) {
            let s: f64 = (i + 1..p)
                .filter(|&k| kept[k])
                .map(|k| l[k * p + i] * x[k])
                .sum();
            x[i] = (z[i] - s) / l[i * p + i];
        }
        x
    };
    let mut beta = solve(&rhs);
    let resid: Vec<f64> = (0..p)
        .map(|i| {
            if !kept[i] {
                return 0.0;
            }
            let ax: f64 = (0..p)
                .filter(|&k| kept[k])
                .map(|k| a[i * p + k] * beta[k])
                .sum();
            rhs[i] - ax
        })
        .collect();
    for (b, d) in beta.iter_mut().zip(solve(&resid)) {
        *b += d;
    }

    Ok(WlsFit {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        dropped: (1..p).filter(|&i| !kept[i]).map(|i| i - 1).collect(),
        n_obs: rows.len(),
        weight_sum: weights.iter().sum(),
        min_pivot,
        max_pivot,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockContribution {
    pub block: String,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObResult {
    pub mean_a: f64,
    pub mean_b: f64,
    pub explained: f64,
    pub unexplained: f64,
    /// Explained component per block, in block order.
    pub blocks: Vec<BlockContribution>,
    pub fit_a: WlsFit,
    pub fit_b: WlsFit,
    pub means_a: Vec<f64>,
    pub means_b: Vec<f64>,
}

impl ObResult {
    pub fn gap(&self) -> f64 {
        self.mean_b - self.mean_a
    }
}

fn weighted_mean(cells: &[&ObCell]) -> f64 {
    let w: f64 = cells.iter().map(|c| c.weight).sum();
    cells.iter().map(|c| c.weight * c.outcome).sum::<f64>() / w
}

/// Two-fold decomposition with PreGpt as group A (reference coefficients)
/// and PostGpt as group B.
pub fn ob_twofold(cells: &[ObCell], blocks: &CovariateBlocks) -> Result<ObResult, ObError> {
    let design = build_design(cells, blocks)?;
    let split = |g: ObGroup| -> Result<(Vec<&ObCell>, Vec<&[u32]>), ObError> {
        let (cs, rs): (Vec<_>, Vec<_>) = cells
            .iter()
            .zip(&design.rows)
            .filter(|(c, _)| c.group == g)
            .map(|(c, r)| (c, r.as_slice()))
            .unzip();
        if cs.is_empty() {
            return Err(ObError::EmptyGroup(g));
        }
        Ok((cs, rs))
    };
    let (cells_a, rows_a) = split(ObGroup::PreGpt)?;
    let (cells_b, rows_b) = split(ObGroup::PostGpt)?;
    let fit = |cs: &[&ObCell], rs: &[&[u32]]| {
        let y: Vec<f64> = cs.iter().map(|c| c.outcome).collect();
        let w: Vec<f64> = cs.iter().map(|c| c.weight).collect();
        wls_fit(rs, &y, &w, design.n_columns)
    };
    let (fit_a, fit_b) = rayon::join(|| fit(&cells_a, &rows_a), || fit(&cells_b, &rows_b));
    let (fit_a, fit_b) = (fit_a?, fit_b?);

    let means_a = weighted_column_means(&design, cells, |c| c.group == ObGroup::PreGpt);
    let means_b = weighted_column_means(&design, cells, |c| c.group == ObGroup::PostGpt);
    let mut per_block = vec![0.0; blocks.blocks.len()];
    let mut unexplained = fit_b.intercept - fit_a.intercept;
    for k in 0..design.n_columns {
        per_block[design.column_block[k]] += (means_b[k] - means_a[k]) * fit_a.coefficients[k];
        unexplained += means_b[k] * (fit_b.coefficients[k] - fit_a.coefficients[k]);
    }
    Ok(ObResult {
        mean_a: weighted_mean(&cells_a),
        mean_b: weighted_mean(&cells_b),
        explained: per_block.iter().sum(),
        unexplained,
        blocks: blocks
            .blocks
            .iter()
            .zip(per_block)
            .map(|(b, contribution)| BlockContribution {
                block: b.name.clone(),
                contribution,
            })
            .collect(),
        fit_a,
        fit_b,
        means_a,
        means_b,
    })
}

/// Aggregate postings into cells keyed on every block category and the
/// pre/post group. Postings dated on or after `cut` are PostGpt. A cell's
/// weight is its summed posting weight and its outcome the weighted mean index.
pub fn cells_from_postings(
    rows: &[ExposureRow],
    cut: NaiveDate,
    index: IndexChoice,
) -> Result<Vec<ObCell>, ObError> {
    let mut acc: BTreeMap<(ObGroup, [&str; 7]), (f64, f64)> = BTreeMap::new();
    for r in rows {
        let date = r
            .date
            .ok_or_else(|| ObError::InvalidCell(format!("posting {} has no date", r.posting_id)))?;
        let group = if date >= cut {
            ObGroup::PostGpt
        } else {
            ObGroup::PreGpt
        };
        let key = [
            r.occupation.as_str(),
            sector_code(&r.industry),
            r.seniority.as_str(),
            r.state.as_str(),
            r.remote.as_str(),
            r.internship.as_str(),
            r.employment_type.as_str(),
        ];
        let a = acc.entry((group, key)).or_default();
        a.0 += r.weight;
        a.1 += r.weight * r.index(index);
    }
    Ok(acc
        .into_iter()
        .map(|((group, key), (w, s))| ObCell {
            categories: key.iter().map(|k| k.to_string()).collect(),
            group,
            weight: w,
            outcome: s / w,
        })
        .collect())
}

/// Default pre/post boundary.
pub fn default_cut() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 12, 1).expect("valid date")
}
