//! Loaders for the published reference tables shipped under `fixtures/`.
//!
//! These tables pin down regression targets: the first asset set's
//! transition matrix, both sets' per-state method-blend weights, annual
//! return/volatility/Sharpe panels, whole-period totals, the per-state
//! method assignment, and the typeset indicator vectors (kept verbatim even
//! though they disagree with the assignment list; the tests document that
//! mismatch).

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::allocators::Method;

#[derive(Error, Debug)]
pub enum FixtureError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unknown method label {0:?}")]
    UnknownMethod(String),
}

/// Which published asset universe a table belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssetSet {
    First,
    Second,
}

impl AssetSet {
    fn prefix(&self) -> &'static str {
        match self {
            AssetSet::First => "first_asset",
            AssetSet::Second => "second_asset",
        }
    }
}

/// Annual metric panels available per asset set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnualMetric {
    Returns,
    Volatility,
    Sharpe,
}

impl AnnualMetric {
    fn stem(&self) -> &'static str {
        match self {
            AnnualMetric::Returns => "annual_returns",
            AnnualMetric::Volatility => "annual_volatility",
            AnnualMetric::Sharpe => "annual_sharpe",
        }
    }
}

/// Column order used by every method-indexed table.
pub const METHOD_COLUMNS: [Method; 4] = [Method::Erc, Method::MinVar, Method::MaxDiv, Method::Equal];

/// Annual panel: years in order plus one value per method column and one for
/// the dynamic strategy.
#[derive(Debug, Clone)]
pub struct AnnualTable {
    pub years: Vec<i32>,
    /// `values[row][column]`, columns ordered ERC, MinVar, MaxDiv, Equal,
    /// Dynamic.
    pub values: Vec<Vec<f64>>,
}

impl AnnualTable {
    pub fn column_label(idx: usize) -> &'static str {
        ["ERC", "MinVar", "MaxDiv", "Equal", "Dynamic"][idx]
    }

    pub fn value(&self, year: i32, column: usize) -> Option<f64> {
        let row = self.years.iter().position(|y| *y == year)?;
        self.values[row].get(column).copied()
    }
}

/// Whole-period totals per strategy.
#[derive(Debug, Clone)]
pub struct TotalsTable {
    /// (label, total_return, total_volatility, total_sharpe)
    pub rows: Vec<(String, f64, f64, f64)>,
}

impl TotalsTable {
    pub fn row(&self, label: &str) -> Option<(f64, f64, f64)> {
        self.rows
            .iter()
            .find(|(l, _, _, _)| l == label)
            .map(|(_, a, b, c)| (*a, *b, *c))
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, FixtureError> {
    let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(str::to_string)
        .filter(|l| !l.trim().is_empty())
        .collect())
}

fn parse_f64(path: &Path, line: usize, raw: &str) -> Result<f64, FixtureError> {
    raw.trim().parse::<f64>().map_err(|_| FixtureError::Parse {
        path: path.display().to_string(),
        line,
        message: format!("expected number, got {raw:?}"),
    })
}

fn method_from_label(label: &str) -> Result<Method, FixtureError> {
    match label.trim() {
        "ERC" => Ok(Method::Erc),
        "Min_Var" | "MinVar" => Ok(Method::MinVar),
        "Max_Div" | "MaxDiv" => Ok(Method::MaxDiv),
        "Equal" | "Equal_Investment" => Ok(Method::Equal),
        other => Err(FixtureError::UnknownMethod(other.to_string())),
    }
}

/// The first asset set's 10x10 transition matrix, exactly as typeset (rows
/// sum to 1 only within table rounding).
pub fn transition_matrix(dir: &Path) -> Result<Vec<Vec<f64>>, FixtureError> {
    let path = dir.join("first_asset_transition_matrix.csv");
    let lines = read_lines(&path)?;
    let mut out = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let mut row = Vec::with_capacity(cells.len() - 1);
        for cell in &cells[1..] {
            row.push(parse_f64(&path, idx + 1, cell)?);
        }
        out.push(row);
    }
    Ok(out)
}

/// Per-state method-blend weight table (ERC, MinVar, MaxDiv, Equal columns).
pub fn total_return_weights_table(
    dir: &Path,
    set: AssetSet,
) -> Result<Vec<Vec<f64>>, FixtureError> {
    let path = dir.join(format!("{}_total_return_weights.csv", set.prefix()));
    let lines = read_lines(&path)?;
    let mut out = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let mut row = Vec::with_capacity(4);
        for cell in &cells[1..5] {
            row.push(parse_f64(&path, idx + 1, cell)?);
        }
        out.push(row);
    }
    Ok(out)
}

/// Annual return/volatility/Sharpe panel for one asset set.
pub fn annual_table(
    dir: &Path,
    set: AssetSet,
    metric: AnnualMetric,
) -> Result<AnnualTable, FixtureError> {
    let path = dir.join(format!("{}_{}.csv", set.prefix(), metric.stem()));
    let lines = read_lines(&path)?;
    let mut years = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let year = cells[0].trim().parse::<i32>().map_err(|_| FixtureError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: format!("expected year, got {:?}", cells[0]),
        })?;
        let mut row = Vec::with_capacity(5);
        for cell in &cells[1..6] {
            row.push(parse_f64(&path, idx + 1, cell)?);
        }
        years.push(year);
        values.push(row);
    }
    Ok(AnnualTable { years, values })
}

/// Whole-period totals table for one asset set.
pub fn totals_table(dir: &Path, set: AssetSet) -> Result<TotalsTable, FixtureError> {
    let path = dir.join(format!("{}_totals.csv", set.prefix()));
    let lines = read_lines(&path)?;
    let mut rows = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        rows.push((
            cells[0].trim().to_string(),
            parse_f64(&path, idx + 1, cells[1])?,
            parse_f64(&path, idx + 1, cells[2])?,
            parse_f64(&path, idx + 1, cells[3])?,
        ));
    }
    Ok(TotalsTable { rows })
}

/// The first asset set's per-state best-method list (from the assignment
/// text, which reproduces the weight table; see
/// [`printed_indicator_vectors`] for the inconsistent typeset vectors).
pub fn method_assignment(dir: &Path) -> Result<Vec<Method>, FixtureError> {
    let path = dir.join("first_asset_method_assignment.csv");
    let lines = read_lines(&path)?;
    let mut best = Vec::new();
    for line in lines.iter().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        best.push(method_from_label(cells[1])?);
    }
    Ok(best)
}

/// The typeset binary indicator vectors, verbatim. These do not partition
/// the states (they disagree with [`method_assignment`]); tests assert that.
pub fn printed_indicator_vectors(
    dir: &Path,
) -> Result<Vec<(Method, Vec<u8>)>, FixtureError> {
    let path = dir.join("first_asset_indicator_vectors_printed.csv");
    let lines = read_lines(&path)?;
    let mut out = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let method = method_from_label(cells[0])?;
        let mut vec = Vec::with_capacity(cells.len() - 1);
        for cell in &cells[1..] {
            let v = parse_f64(&path, idx + 1, cell)?;
            vec.push(if v != 0.0 { 1 } else { 0 });
        }
        out.push((method, vec));
    }
    Ok(out)
}

/// Fixture directory for in-repo tests and tooling: `<workspace>/fixtures`.
pub fn default_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}
