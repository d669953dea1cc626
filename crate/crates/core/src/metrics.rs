//! Compilation success rate, alignment mean, and the provider × condition
//! report with its unweighted averages row.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Mode;

/// Decimal places of reported percentages.
pub const RATE_DECIMALS: u32 = 1;
/// Decimal places of reported alignment scores.
pub const ALIGNMENT_DECIMALS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("cell has no non-excluded results")]
    EmptyCell,
    #[error("no result produced an alignment score")]
    NoAlignedResults,
    #[error("providers differ between conditions: {0}")]
    ConditionMismatch(String),
    #[error("duplicate cell for provider `{provider}` condition {mode}")]
    DuplicateCell { provider: String, mode: Mode },
    #[error("no cells to aggregate")]
    NoCells,
}

/// How one generated script fared in the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompileOutcome {
    Compiled,
    Failed,
    /// Infrastructure fault; not counted either way.
    Excluded,
}

/// Rounds half away from zero to `decimals` places.
pub fn round_to(value: f64, decimals: u32) -> f64 {
    let scale = libm::pow(10.0, f64::from(decimals));
    libm::round(value * scale) / scale
}

/// `100 · compiled / non-excluded`, rounded to one decimal.
///
/// Computed in integer tenths so that e.g. 23 of 30 is exactly 76.7.
pub fn compilation_rate<I>(outcomes: I) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = CompileOutcome>,
{
    let (mut compiled, mut counted) = (0u64, 0u64);
    for outcome in outcomes {
        match outcome {
            CompileOutcome::Compiled => {
                compiled += 1;
                counted += 1;
            }
            CompileOutcome::Failed => counted += 1,
            CompileOutcome::Excluded => {}
        }
    }
    if counted == 0 {
        return Err(MetricsError::EmptyCell);
    }
    // round(1000 · c / n) with ties away from zero
    let tenths = (2000 * compiled + counted) / (2 * counted);
    Ok(tenths as f64 / 10.0)
}

/// Arithmetic mean of the present scores, rounded to three decimals.
pub fn alignment_mean<I>(scores: I) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let (mut sum, mut n) = (0.0, 0usize);
    for score in scores.into_iter().flatten() {
        sum += score;
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoAlignedResults);
    }
    Ok(round_to(sum / n as f64, ALIGNMENT_DECIMALS))
}

/// Metrics of one (provider, condition) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    /// Percent, one decimal. `None` when every item was excluded.
    pub compilation_rate: Option<f64>,
    /// Three decimals. `None` when no item produced a score.
    pub alignment_mean: Option<f64>,
    /// Non-excluded items.
    pub n: usize,
    pub compiled: usize,
    pub excluded: usize,
    pub aligned: usize,
}

impl CellMetrics {
    /// Builds a cell from per-item outcomes and optional alignment scores.
    pub fn from_items<I>(items: I) -> Self
    where
        I: IntoIterator<Item = (CompileOutcome, Option<f64>)>,
    {
        let items: Vec<_> = items.into_iter().collect();
        let count = |o: CompileOutcome| items.iter().filter(|(x, _)| *x == o).count();
        Self {
            compilation_rate: compilation_rate(items.iter().map(|(o, _)| *o)).ok(),
            alignment_mean: alignment_mean(items.iter().map(|(_, a)| *a)).ok(),
            n: items.len() - count(CompileOutcome::Excluded),
            compiled: count(CompileOutcome::Compiled),
            excluded: count(CompileOutcome::Excluded),
            aligned: items.iter().filter(|(_, a)| a.is_some()).count(),
        }
    }

    /// A cell known only by its reported values.
    pub fn reported(compilation_rate: f64, alignment_mean: f64) -> Self {
        Self {
            compilation_rate: Some(compilation_rate),
            alignment_mean: Some(alignment_mean),
            n: 0,
            compiled: 0,
            excluded: 0,
            aligned: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderCell {
    pub provider: String,
    pub mode: Mode,
    pub metrics: CellMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub provider: String,
    pub cells: BTreeMap<Mode, CellMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAverage {
    pub compilation_rate: Option<f64>,
    pub alignment_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub conditions: Vec<Mode>,
    /// Providers in first-seen order.
    pub rows: Vec<ReportRow>,
    pub averages: BTreeMap<Mode, ConditionAverage>,
}

fn mean_rounded<I: Iterator<Item = f64>>(values: I, decimals: u32) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| round_to(sum / n as f64, decimals))
}

/// Groups cells into rows and computes the averages row: the unweighted
/// mean over providers of each condition's reported values, rounded to
/// table precision. Providers whose cell lacks a value are skipped in that
/// column's mean.
pub fn aggregate_report(cells: &[ProviderCell]) -> Result<EvaluationReport, MetricsError> {
    if cells.is_empty() {
        return Err(MetricsError::NoCells);
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut per_mode: BTreeMap<Mode, BTreeSet<&str>> = BTreeMap::new();
    for cell in cells {
        if !per_mode
            .entry(cell.mode)
            .or_default()
            .insert(&cell.provider)
        {
            return Err(MetricsError::DuplicateCell {
                provider: cell.provider.clone(),
                mode: cell.mode,
            });
        }
        match rows.iter_mut().find(|r| r.provider == cell.provider) {
            Some(row) => {
                row.cells.insert(cell.mode, cell.metrics.clone());
            }
            None => {
                let mut row_cells = BTreeMap::new();
                row_cells.insert(cell.mode, cell.metrics.clone());
                rows.push(ReportRow {
                    provider: cell.provider.clone(),
                    cells: row_cells,
                });
            }
        }
    }

    let mut sets = per_mode.values();
    let first = sets.next().expect("at least one condition");
    for other in sets {
        if other != first {
            let diff: Vec<&str> = first.symmetric_difference(other).copied().collect();
            return Err(MetricsError::ConditionMismatch(diff.join(", ")));
        }
    }

    let conditions: Vec<Mode> = per_mode.keys().copied().collect();
    let averages = conditions
        .iter()
        .map(|&mode| {
            let cells = || rows.iter().filter_map(move |r| r.cells.get(&mode));
            (
                mode,
                ConditionAverage {
                    compilation_rate: mean_rounded(
                        cells().filter_map(|c| c.compilation_rate),
                        RATE_DECIMALS,
                    ),
                    alignment_mean: mean_rounded(
                        cells().filter_map(|c| c.alignment_mean),
                        ALIGNMENT_DECIMALS,
                    ),
                },
            )
        })
        .collect();

    Ok(EvaluationReport {
        conditions,
        rows,
        averages,
    })
}
