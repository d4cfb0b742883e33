//! Dynamic strategy assembly: pick the best static method per state, turn
//! the transition matrix into per-state method-blend weights, run the t+1
//! backtest, and report performance.
//!
//! The blend weight for method `m` in state `i` is the probability of
//! landing in a state where `m` is best: `W[i][m] = sum_j P[i][j] p_m[j]`
//! with `p_m` the binary indicator of states assigned to `m`. The next day's
//! dynamic return blends the static methods by `W[state_t]`, so it is always
//! a convex combination of the static returns.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocators::{
    self, AllocationDiagnostics, AllocationError, CovarianceMatrix, Method, WeightVector,
};
use crate::marketdata::{MarketDataError, ReturnSeries};
use crate::stats::{self, Divisor};

/// Annual risk-free rate used by the Sharpe convention unless overridden.
pub const DEFAULT_RISK_FREE_RATE: f64 = 0.01;

#[derive(Error, Debug)]
pub enum DynamicError {
    #[error("no methods supplied")]
    NoMethods,
    #[error("duplicate method {0}")]
    DuplicateMethod(Method),
    #[error("series misaligned: {context} ({left} vs {right})")]
    Misaligned {
        context: String,
        left: usize,
        right: usize,
    },
    #[error("state {0} has zero labeled days")]
    StateNeverVisited(usize),
    #[error("label {label} at day {day} out of range 1..={k}")]
    LabelOutOfRange { label: usize, day: usize, k: usize },
    #[error("indicators do not partition the states: state {state} is claimed {count} times")]
    NonPartition { state: usize, count: usize },
    #[error("transition matrix is {rows}x{cols}, expected {k}x{k}")]
    BadTransitionShape { rows: usize, cols: usize, k: usize },
    #[error("transition row {row} sums to {sum}")]
    BadTransitionRow { row: usize, sum: f64 },
    #[error("method {0} missing from the static return set")]
    MissingMethod(Method),
    #[error("year {0} has no observations for column {1}")]
    EmptyYear(i32, String),
    #[error("ledger is empty")]
    EmptyLedger,
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error(transparent)]
    Market(#[from] MarketDataError),
    #[error("io error writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Daily returns of each static method over a common date axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticReturns {
    dates: Vec<NaiveDate>,
    columns: Vec<(Method, Vec<f64>)>,
}

impl StaticReturns {
    pub fn new(
        dates: Vec<NaiveDate>,
        columns: Vec<(Method, Vec<f64>)>,
    ) -> Result<Self, DynamicError> {
        if columns.is_empty() {
            return Err(DynamicError::NoMethods);
        }
        let mut seen = Vec::new();
        for (method, series) in &columns {
            if seen.contains(method) {
                return Err(DynamicError::DuplicateMethod(*method));
            }
            seen.push(*method);
            if series.len() != dates.len() {
                return Err(DynamicError::Misaligned {
                    context: format!("{method} returns vs dates"),
                    left: series.len(),
                    right: dates.len(),
                });
            }
        }
        Ok(Self { dates, columns })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn methods(&self) -> Vec<Method> {
        self.columns.iter().map(|(m, _)| *m).collect()
    }

    pub fn column(&self, method: Method) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(m, _)| *m == method)
            .map(|(_, series)| series.as_slice())
    }
}

/// Which method is best in each state, plus the induced binary indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMethodAssignment {
    methods: Vec<Method>,
    best: Vec<Method>,
}

impl StateMethodAssignment {
    /// Build from a per-state best list; every best method must be in
    /// `methods`.
    pub fn new(methods: Vec<Method>, best: Vec<Method>) -> Result<Self, DynamicError> {
        if methods.is_empty() {
            return Err(DynamicError::NoMethods);
        }
        let mut seen = Vec::new();
        for m in &methods {
            if seen.contains(m) {
                return Err(DynamicError::DuplicateMethod(*m));
            }
            seen.push(*m);
        }
        for b in &best {
            if !methods.contains(b) {
                return Err(DynamicError::MissingMethod(*b));
            }
        }
        Ok(Self { methods, best })
    }

    /// Build from explicit binary indicator vectors (one per method, each of
    /// length k). The vectors must partition the states: exactly one method
    /// claims each state.
    pub fn from_indicators(
        methods: Vec<Method>,
        indicators: &[Vec<u8>],
    ) -> Result<Self, DynamicError> {
        if methods.len() != indicators.len() || methods.is_empty() {
            return Err(DynamicError::NoMethods);
        }
        let k = indicators[0].len();
        for vec in indicators {
            if vec.len() != k {
                return Err(DynamicError::Misaligned {
                    context: "indicator lengths".to_string(),
                    left: vec.len(),
                    right: k,
                });
            }
        }
        let mut best = Vec::with_capacity(k);
        for state in 0..k {
            let claimants: Vec<usize> = (0..methods.len())
                .filter(|m| indicators[*m][state] != 0)
                .collect();
            if claimants.len() != 1 {
                return Err(DynamicError::NonPartition {
                    state: state + 1,
                    count: claimants.len(),
                });
            }
            best.push(methods[claimants[0]]);
        }
        Self::new(methods, best)
    }

    pub fn k(&self) -> usize {
        self.best.len()
    }

    pub fn methods(&self) -> &[Method] {
        &self.methods
    }

    pub fn best(&self) -> &[Method] {
        &self.best
    }

    /// Binary indicator of the states assigned to `method`.
    pub fn indicator(&self, method: Method) -> Vec<f64> {
        self.best
            .iter()
            .map(|b| if *b == method { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Per-state blend weights across methods: `W[state][method]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalReturnWeights {
    methods: Vec<Method>,
    w: Vec<Vec<f64>>,
}

impl TotalReturnWeights {
    pub fn k(&self) -> usize {
        self.w.len()
    }

    pub fn methods(&self) -> &[Method] {
        &self.methods
    }

    /// Blend weights for (1-based) `state`.
    pub fn row(&self, state: usize) -> &[f64] {
        &self.w[state - 1]
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.w
    }
}

/// Pick the best method per state by compounded return over that state's
/// labeled days. Ties go to the canonical method order (ERC, MinVar, MaxDiv,
/// Equal).
pub fn select_best_methods(
    static_returns: &StaticReturns,
    labels: &[usize],
    k: usize,
) -> Result<StateMethodAssignment, DynamicError> {
    if labels.len() != static_returns.len() {
        return Err(DynamicError::Misaligned {
            context: "labels vs static returns".to_string(),
            left: labels.len(),
            right: static_returns.len(),
        });
    }
    for (day, label) in labels.iter().enumerate() {
        if *label < 1 || *label > k {
            return Err(DynamicError::LabelOutOfRange {
                label: *label,
                day,
                k,
            });
        }
    }
    let methods = static_returns.methods();
    let candidates: Vec<Method> = Method::ALL
        .iter()
        .filter(|m| methods.contains(m))
        .copied()
        .collect();

    let mut best = Vec::with_capacity(k);
    for state in 1..=k {
        let days: Vec<usize> = (0..labels.len()).filter(|t| labels[*t] == state).collect();
        if days.is_empty() {
            return Err(DynamicError::StateNeverVisited(state));
        }
        let mut winner = None;
        let mut winner_growth = f64::NEG_INFINITY;
        for method in &candidates {
            let series = static_returns.column(*method).expect("method present");
            let growth: f64 = days.iter().map(|t| 1.0 + series[*t]).product();
            if growth > winner_growth {
                winner_growth = growth;
                winner = Some(*method);
            }
        }
        best.push(winner.expect("at least one method"));
    }
    StateMethodAssignment::new(methods, best)
}

/// `W[.][m] = P p_m`: probability-weighted allocation to each method.
pub fn total_return_weights(
    transition: &[Vec<f64>],
    assignment: &StateMethodAssignment,
) -> Result<TotalReturnWeights, DynamicError> {
    let k = assignment.k();
    if transition.len() != k || transition.iter().any(|row| row.len() != k) {
        return Err(DynamicError::BadTransitionShape {
            rows: transition.len(),
            cols: transition.first().map_or(0, Vec::len),
            k,
        });
    }
    for (row_idx, row) in transition.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(DynamicError::BadTransitionRow {
                row: row_idx + 1,
                sum,
            });
        }
    }
    let indicators: Vec<Vec<f64>> = assignment
        .methods()
        .iter()
        .map(|m| assignment.indicator(*m))
        .collect();
    let w = transition
        .iter()
        .map(|row| {
            indicators
                .iter()
                .map(|p| row.iter().zip(p).map(|(pij, pj)| pij * pj).sum())
                .collect()
        })
        .collect();
    Ok(TotalReturnWeights {
        methods: assignment.methods().to_vec(),
        w,
    })
}

/// How the dynamic day-ahead return combines the static methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendMode {
    /// Probability-weighted blend across methods (default).
    Blend,
    /// Follow only the method with the largest blend weight.
    Argmax,
}

/// Daily accounting for every strategy, with value paths from one currency
/// unit.
///
/// Value paths follow `value[t] = value[t-1] * (1 + r[t])` with `value[0] =
/// 1`, so the day-0 return is not compounded for any column and the paths
/// measure growth from the first labeled day. The dynamic return needs a
/// labeled prior day and is therefore undefined on day 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestLedger {
    pub dates: Vec<NaiveDate>,
    pub states: Vec<usize>,
    pub methods: Vec<Method>,
    /// Parallel to `methods`.
    pub method_returns: Vec<Vec<f64>>,
    pub dynamic_returns: Vec<Option<f64>>,
    /// Parallel to `methods`.
    pub method_values: Vec<Vec<f64>>,
    pub dynamic_values: Vec<f64>,
}

impl BacktestLedger {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// One row per day: date, state, then a value per method plus Dynamic.
    pub fn write_value_paths_csv(&self, path: &Path) -> Result<(), DynamicError> {
        let mut out = String::new();
        out.push_str("date,state");
        for method in &self.methods {
            out.push(',');
            out.push_str(method.label());
        }
        out.push_str(",Dynamic\n");
        for t in 0..self.len() {
            out.push_str(&format!("{},{}", self.dates[t].format("%Y-%m-%d"), self.states[t]));
            for col in &self.method_values {
                out.push_str(&format!(",{}", col[t]));
            }
            out.push_str(&format!(",{}\n", self.dynamic_values[t]));
        }
        write_atomic(path, out.as_bytes())
    }
}

fn compound_path(returns: &[f64]) -> Vec<f64> {
    let mut values = Vec::with_capacity(returns.len());
    let mut value = 1.0;
    values.push(value);
    for r in &returns[1..] {
        value *= 1.0 + r;
        values.push(value);
    }
    values
}

/// Run the t+1 backtest: the state observed at `t` selects the blend row
/// applied to the static returns realized at `t + 1`.
pub fn run_dynamic_backtest(
    static_returns: &StaticReturns,
    labels: &[usize],
    weights: &TotalReturnWeights,
    mode: BlendMode,
) -> Result<BacktestLedger, DynamicError> {
    if labels.len() != static_returns.len() {
        return Err(DynamicError::Misaligned {
            context: "labels vs static returns".to_string(),
            left: labels.len(),
            right: static_returns.len(),
        });
    }
    if labels.is_empty() {
        return Err(DynamicError::EmptyLedger);
    }
    let k = weights.k();
    for (day, label) in labels.iter().enumerate() {
        if *label < 1 || *label > k {
            return Err(DynamicError::LabelOutOfRange {
                label: *label,
                day,
                k,
            });
        }
    }
    for method in weights.methods() {
        if static_returns.column(*method).is_none() {
            return Err(DynamicError::MissingMethod(*method));
        }
    }

    let methods = weights.methods().to_vec();
    let method_returns: Vec<Vec<f64>> = methods
        .iter()
        .map(|m| static_returns.column(*m).unwrap().to_vec())
        .collect();

    let mut dynamic_returns: Vec<Option<f64>> = vec![None];
    for t in 1..labels.len() {
        let row = weights.row(labels[t - 1]);
        let value = match mode {
            BlendMode::Blend => row
                .iter()
                .zip(&method_returns)
                .map(|(w, series)| w * series[t])
                .sum(),
            BlendMode::Argmax => {
                let mut best_idx = 0usize;
                let mut best_w = f64::NEG_INFINITY;
                for (idx, w) in row.iter().enumerate() {
                    if *w > best_w {
                        best_w = *w;
                        best_idx = idx;
                    }
                }
                method_returns[best_idx][t]
            }
        };
        dynamic_returns.push(Some(value));
    }

    let method_values: Vec<Vec<f64>> = method_returns.iter().map(|r| compound_path(r)).collect();
    let mut dynamic_values = Vec::with_capacity(labels.len());
    let mut value = 1.0;
    dynamic_values.push(value);
    for r in dynamic_returns.iter().skip(1) {
        value *= 1.0 + r.expect("defined after day 0");
        dynamic_values.push(value);
    }

    Ok(BacktestLedger {
        dates: static_returns.dates().to_vec(),
        states: labels.to_vec(),
        methods,
        method_returns,
        dynamic_returns,
        method_values,
        dynamic_values,
    })
}

/// Annual and whole-period performance for one return column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    /// Compounded return over the year's days.
    pub annual_return: f64,
    /// Standard deviation of the year's daily returns (daily scale, no
    /// annualization).
    pub volatility: f64,
    /// `(annual_return - rf) / volatility`; `None` when volatility is zero.
    pub sharpe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharpe_undefined_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearRow {
    pub year: i32,
    /// One cell per column, labeled by method (or "Dynamic").
    pub cells: Vec<(String, MetricCell)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalsRow {
    pub column: String,
    /// `prod_years (1 + annual_return) - 1`.
    pub total_return: f64,
    /// Population standard deviation of the annual returns.
    pub total_volatility: f64,
    /// `(total_return - rf) / total_volatility`; `None` when volatility is 0.
    pub total_sharpe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub years: Vec<YearRow>,
    pub totals: Vec<TotalsRow>,
    pub risk_free_rate: f64,
}

impl PerformanceReport {
    pub fn cell(&self, year: i32, column: &str) -> Option<&MetricCell> {
        self.years
            .iter()
            .find(|row| row.year == year)?
            .cells
            .iter()
            .find(|(label, _)| label == column)
            .map(|(_, cell)| cell)
    }

    pub fn totals_for(&self, column: &str) -> Option<&TotalsRow> {
        self.totals.iter().find(|row| row.column == column)
    }

    pub fn write_yearly_csv(&self, path: &Path) -> Result<(), DynamicError> {
        let mut out = String::from("year,column,annual_return,volatility,sharpe\n");
        for row in &self.years {
            for (label, cell) in &row.cells {
                let sharpe = cell
                    .sharpe
                    .map(|s| s.to_string())
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.year, label, cell.annual_return, cell.volatility, sharpe
                ));
            }
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn write_totals_csv(&self, path: &Path) -> Result<(), DynamicError> {
        let mut out = String::from("column,total_return,total_volatility,total_sharpe\n");
        for row in &self.totals {
            let sharpe = row
                .total_sharpe
                .map(|s| s.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.column, row.total_return, row.total_volatility, sharpe
            ));
        }
        write_atomic(path, out.as_bytes())
    }
}

/// Compounded return over a slice of daily returns.
pub fn compound(returns: &[f64]) -> f64 {
    returns.iter().map(|r| 1.0 + r).product::<f64>() - 1.0
}

pub fn performance_report(
    ledger: &BacktestLedger,
    risk_free_rate: f64,
) -> Result<PerformanceReport, DynamicError> {
    performance_report_with(ledger, risk_free_rate, Divisor::Sample)
}

/// As [`performance_report`] with an explicit divisor for the annual daily
/// volatility. Whole-period volatility over annual returns always uses the
/// population divisor.
pub fn performance_report_with(
    ledger: &BacktestLedger,
    risk_free_rate: f64,
    annual_divisor: Divisor,
) -> Result<PerformanceReport, DynamicError> {
    if ledger.is_empty() {
        return Err(DynamicError::EmptyLedger);
    }
    let mut columns: Vec<(String, Vec<Option<f64>>)> = ledger
        .methods
        .iter()
        .zip(&ledger.method_returns)
        .map(|(m, series)| {
            (
                m.label().to_string(),
                series.iter().map(|r| Some(*r)).collect(),
            )
        })
        .collect();
    columns.push(("Dynamic".to_string(), ledger.dynamic_returns.clone()));

    let mut year_days: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (t, date) in ledger.dates.iter().enumerate() {
        year_days.entry(date.year()).or_default().push(t);
    }

    let mut years = Vec::new();
    let mut annual_by_column: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (year, days) in &year_days {
        let mut cells = Vec::new();
        for (col_idx, (label, series)) in columns.iter().enumerate() {
            let observed: Vec<f64> = days.iter().filter_map(|t| series[*t]).collect();
            if observed.is_empty() {
                return Err(DynamicError::EmptyYear(*year, label.clone()));
            }
            let annual_return = compound(&observed);
            let volatility = stats::stdev(&observed, annual_divisor);
            let (sharpe, reason) = if volatility == 0.0 {
                (None, Some("zero volatility".to_string()))
            } else {
                (Some((annual_return - risk_free_rate) / volatility), None)
            };
            annual_by_column[col_idx].push(annual_return);
            cells.push((
                label.clone(),
                MetricCell {
                    annual_return,
                    volatility,
                    sharpe,
                    sharpe_undefined_reason: reason,
                },
            ));
        }
        years.push(YearRow { year: *year, cells });
    }

    let totals = columns
        .iter()
        .zip(&annual_by_column)
        .map(|((label, _), annual)| {
            let total_return = compound(annual);
            let total_volatility = stats::stdev(annual, Divisor::Population);
            let total_sharpe = if total_volatility == 0.0 {
                None
            } else {
                Some((total_return - risk_free_rate) / total_volatility)
            };
            TotalsRow {
                column: label.clone(),
                total_return,
                total_volatility,
                total_sharpe,
            }
        })
        .collect();

    Ok(PerformanceReport {
        years,
        totals,
        risk_free_rate,
    })
}

/// Full-period weights for all four methods over one covariance estimate.
#[derive(Debug, Clone)]
pub struct MethodAllocations {
    /// Parallel to [`Method::ALL`].
    pub weights: Vec<WeightVector>,
    /// Diagnostics for the numeric solvers; `None` for equal weight.
    pub diagnostics: Vec<Option<AllocationDiagnostics>>,
}

/// Solve every static method against one covariance matrix.
pub fn solve_static_allocations(cov: &CovarianceMatrix) -> Result<MethodAllocations, DynamicError> {
    let (erc_w, erc_d) = allocators::erc(cov)?;
    let (mv_w, mv_d) = allocators::min_variance_constrained(cov)?;
    let (md_w, md_d) = allocators::max_diversification(cov)?;
    let eq_w = allocators::equal_weight(cov.n())?;
    Ok(MethodAllocations {
        weights: vec![erc_w, mv_w, md_w, eq_w],
        diagnostics: vec![Some(erc_d), Some(mv_d), Some(md_d), None],
    })
}

/// When static weights are re-estimated during the backtest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitPolicy {
    /// One covariance over the whole analysis period (in-sample, the
    /// default).
    FullPeriod,
    /// Re-solve every `months` using an expanding window of prior data; the
    /// first block, having no prior data, uses its own span.
    WalkForward { months: u32 },
}

/// Build the per-method daily return columns over `range` (indices into
/// `returns`).
pub fn compute_static_returns(
    returns: &ReturnSeries,
    range: std::ops::Range<usize>,
    policy: RefitPolicy,
) -> Result<StaticReturns, DynamicError> {
    let dates = returns.dates()[range.clone()].to_vec();
    let rows = &returns.rows()[range.clone()];

    // One allocation set per refit block, plus the block index for each day.
    let (blocks, day_block): (Vec<MethodAllocations>, Vec<usize>) = match policy {
        RefitPolicy::FullPeriod => {
            let cov = allocators::estimate_covariance(returns, None)?;
            (vec![solve_static_allocations(&cov)?], vec![0; dates.len()])
        }
        RefitPolicy::WalkForward { months } => {
            let mut block_starts = Vec::new();
            let mut boundary = dates[0];
            for (offset, date) in dates.iter().enumerate() {
                if block_starts.is_empty() || *date >= boundary {
                    block_starts.push(offset);
                    boundary = add_months(*date, months.max(1));
                }
            }
            let mut blocks = Vec::with_capacity(block_starts.len());
            for (block_idx, start_offset) in block_starts.iter().enumerate() {
                let training: Vec<usize> = if block_idx == 0 {
                    // No prior data for the first block; train on its own span.
                    let end = block_starts
                        .get(1)
                        .map(|o| range.start + o)
                        .unwrap_or(range.end);
                    (range.start..end).collect()
                } else {
                    (0..range.start + start_offset).collect()
                };
                let cov = allocators::estimate_covariance(returns, Some(&training))?;
                blocks.push(solve_static_allocations(&cov)?);
            }
            let mut day_block = Vec::with_capacity(dates.len());
            let mut block_idx = 0usize;
            for offset in 0..dates.len() {
                if block_idx + 1 < block_starts.len() && offset >= block_starts[block_idx + 1] {
                    block_idx += 1;
                }
                day_block.push(block_idx);
            }
            (blocks, day_block)
        }
    };

    let columns: Vec<(Method, Vec<f64>)> = Method::ALL
        .iter()
        .enumerate()
        .map(|(m_idx, method)| {
            let series: Vec<f64> = rows
                .iter()
                .enumerate()
                .map(|(offset, row)| {
                    let weights = &blocks[day_block[offset]].weights[m_idx];
                    row.iter()
                        .zip(weights.weights())
                        .map(|(r, w)| r * w)
                        .sum()
                })
                .collect();
            (*method, series)
        })
        .collect();
    StaticReturns::new(dates, columns)
}

fn add_months(date: NaiveDate, months: u32) -> NaiveDate {
    let total = date.month0() + months;
    let year = date.year() + (total / 12) as i32;
    let month = total % 12 + 1;
    NaiveDate::from_ymd_opt(year, month, 1).expect("valid month arithmetic")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DynamicError> {
    let display = path.display().to_string();
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|source| DynamicError::Io {
        path: display.clone(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| DynamicError::Io {
        path: display.clone(),
        source,
    })?;
    std::fs::rename(&tmp, path).map_err(|source| DynamicError::Io {
        path: display,
        source,
    })
}
