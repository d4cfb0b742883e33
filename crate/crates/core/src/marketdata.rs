//! Price ingestion, daily returns, and the rolling volatility series that
//! drives regime classification.
//!
//! Input CSVs are wide tables: a `date` column in ISO-8601 plus one numeric
//! column per ticker. Assets are aligned by inner join on dates; any row with
//! a missing or unparsable price is dropped and counted in the [`LoadReport`].

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocators::WeightVector;
use crate::stats::{self, Divisor};

#[derive(Error, Debug)]
pub enum MarketDataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("missing date column {0:?} in header")]
    MissingDateColumn(String),
    #[error("missing ticker column {0:?} in header")]
    MissingTickerColumn(String),
    #[error("no price columns found")]
    NoAssets,
    #[error("malformed date {value:?} at line {line}")]
    MalformedDate { value: String, line: usize },
    #[error("non-positive price {value} for {ticker} on {date}")]
    NonPositivePrice {
        ticker: String,
        date: NaiveDate,
        value: f64,
    },
    #[error("empty intersection of dates across assets")]
    EmptyIntersection,
    #[error("dates must be strictly increasing: {prev} then {next}")]
    NonIncreasingDates { prev: NaiveDate, next: NaiveDate },
    #[error("series too short: need at least {needed} rows, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("window must be >= 2, got {0}")]
    WindowTooSmall(usize),
    #[error("reference weights have {weights} entries for {assets} assets")]
    WeightLengthMismatch { weights: usize, assets: usize },
    #[error("non-finite value for {ticker} on {date}")]
    NonFinite { ticker: String, date: NaiveDate },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// How the input CSV is laid out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvLayout {
    /// Name of the date column.
    pub date_column: String,
    /// Tickers to load; `None` loads every non-date column.
    pub tickers: Option<Vec<String>>,
}

impl Default for CsvLayout {
    fn default() -> Self {
        Self {
            date_column: "date".to_string(),
            tickers: None,
        }
    }
}

/// Summary of one load, emitted as JSON next to the parsed series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    /// Rows dropped because at least one asset had a missing or blank price.
    pub rows_dropped: usize,
    pub date_range: (NaiveDate, NaiveDate),
    pub tickers: Vec<String>,
}

/// Aligned daily adjusted closing prices for a set of assets.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    /// Row-major: `prices[day][asset]`.
    prices: Vec<Vec<f64>>,
}

impl PriceSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        prices: Vec<Vec<f64>>,
    ) -> Result<Self, MarketDataError> {
        if tickers.is_empty() {
            return Err(MarketDataError::NoAssets);
        }
        if dates.len() != prices.len() {
            return Err(MarketDataError::Shape(format!(
                "{} dates vs {} price rows",
                dates.len(),
                prices.len()
            )));
        }
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(MarketDataError::NonIncreasingDates {
                    prev: pair[0],
                    next: pair[1],
                });
            }
        }
        for (row, date) in prices.iter().zip(&dates) {
            if row.len() != tickers.len() {
                return Err(MarketDataError::Shape(format!(
                    "row on {date} has {} prices for {} tickers",
                    row.len(),
                    tickers.len()
                )));
            }
            for (price, ticker) in row.iter().zip(&tickers) {
                if !price.is_finite() {
                    return Err(MarketDataError::NonFinite {
                        ticker: ticker.clone(),
                        date: *date,
                    });
                }
                if *price <= 0.0 {
                    return Err(MarketDataError::NonPositivePrice {
                        ticker: ticker.clone(),
                        date: *date,
                        value: *price,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            tickers,
            prices,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MarketDataError> {
        write_wide_csv(path, &self.dates, &self.tickers, &self.prices)
    }
}

/// Simple daily returns, one row per day after the first price row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    /// Row-major: `returns[day][asset]`.
    returns: Vec<Vec<f64>>,
}

impl ReturnSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        tickers: Vec<String>,
        returns: Vec<Vec<f64>>,
    ) -> Result<Self, MarketDataError> {
        if dates.len() != returns.len() {
            return Err(MarketDataError::Shape(format!(
                "{} dates vs {} return rows",
                dates.len(),
                returns.len()
            )));
        }
        for (row, date) in returns.iter().zip(&dates) {
            if row.len() != tickers.len() {
                return Err(MarketDataError::Shape(format!(
                    "row on {date} has {} returns for {} tickers",
                    row.len(),
                    tickers.len()
                )));
            }
            for (r, ticker) in row.iter().zip(&tickers) {
                if !r.is_finite() {
                    return Err(MarketDataError::NonFinite {
                        ticker: ticker.clone(),
                        date: *date,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            tickers,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.returns
    }

    /// Daily return of the portfolio holding `weights` across assets.
    pub fn portfolio_returns(&self, weights: &WeightVector) -> Result<Vec<f64>, MarketDataError> {
        let w = weights.weights();
        if w.len() != self.n_assets() {
            return Err(MarketDataError::WeightLengthMismatch {
                weights: w.len(),
                assets: self.n_assets(),
            });
        }
        Ok(self
            .returns
            .iter()
            .map(|row| row.iter().zip(w).map(|(r, wi)| r * wi).sum())
            .collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), MarketDataError> {
        write_wide_csv(path, &self.dates, &self.tickers, &self.returns)
    }

    /// Read back a returns CSV produced by [`ReturnSeries::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self, MarketDataError> {
        let table = read_wide_csv(path, &CsvLayout::default())?;
        let mut dates = Vec::new();
        let mut rows = Vec::new();
        for (date, cells) in table.rows {
            let mut row = Vec::with_capacity(cells.len());
            for cell in &cells {
                match cell {
                    Some(v) => row.push(*v),
                    None => {
                        return Err(MarketDataError::Shape(format!(
                            "missing return value on {date}"
                        )))
                    }
                }
            }
            dates.push(date);
            rows.push(row);
        }
        Self::new(dates, table.tickers, rows)
    }
}

/// Rolling standard deviation of the reference-portfolio daily return.
///
/// Values sit at daily scale; no annualization is applied anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilitySeries {
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
    window: usize,
}

impl VolatilitySeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
        window: usize,
    ) -> Result<Self, MarketDataError> {
        if dates.len() != values.len() {
            return Err(MarketDataError::Shape(format!(
                "{} dates vs {} values",
                dates.len(),
                values.len()
            )));
        }
        Ok(Self {
            dates,
            values,
            window,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

/// Return convention used when differencing prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnKind {
    /// `p[t]/p[t-1] - 1`
    Simple,
    /// `ln(p[t]/p[t-1])`
    Log,
}

struct WideTable {
    tickers: Vec<String>,
    rows: Vec<(NaiveDate, Vec<Option<f64>>)>,
    rows_read: usize,
}

fn read_wide_csv(path: &Path, layout: &CsvLayout) -> Result<WideTable, MarketDataError> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => MarketDataError::Io {
                path: display.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            },
            _ => MarketDataError::Csv {
                path: display.clone(),
                source: e,
            },
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| MarketDataError::Csv {
            path: display.clone(),
            source: e,
        })?
        .iter()
        .map(str::to_string)
        .collect();

    let date_idx = headers
        .iter()
        .position(|h| *h == layout.date_column)
        .ok_or_else(|| MarketDataError::MissingDateColumn(layout.date_column.clone()))?;

    let ticker_cols: Vec<(usize, String)> = match &layout.tickers {
        Some(wanted) => {
            let mut cols = Vec::with_capacity(wanted.len());
            for t in wanted {
                let idx = headers
                    .iter()
                    .position(|h| h == t)
                    .ok_or_else(|| MarketDataError::MissingTickerColumn(t.clone()))?;
                cols.push((idx, t.clone()));
            }
            cols
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != date_idx)
            .map(|(i, h)| (i, h.clone()))
            .collect(),
    };
    if ticker_cols.is_empty() {
        return Err(MarketDataError::NoAssets);
    }

    let mut rows = Vec::new();
    let mut rows_read = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| MarketDataError::Csv {
            path: display.clone(),
            source: e,
        })?;
        rows_read += 1;
        let date_raw = record.get(date_idx).unwrap_or("");
        let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d").map_err(|_| {
            MarketDataError::MalformedDate {
                value: date_raw.to_string(),
                line: line + 2,
            }
        })?;
        let mut cells = Vec::with_capacity(ticker_cols.len());
        for (idx, _) in &ticker_cols {
            let raw = record.get(*idx).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("nan") || raw.eq_ignore_ascii_case("na")
            {
                cells.push(None);
            } else {
                cells.push(raw.parse::<f64>().ok());
            }
        }
        rows.push((date, cells));
    }

    Ok(WideTable {
        tickers: ticker_cols.into_iter().map(|(_, t)| t).collect(),
        rows,
        rows_read,
    })
}

fn write_wide_csv(
    path: &Path,
    dates: &[NaiveDate],
    tickers: &[String],
    rows: &[Vec<f64>],
) -> Result<(), MarketDataError> {
    let display = path.display().to_string();
    let mut writer = csv::Writer::from_path(path).map_err(|e| MarketDataError::Csv {
        path: display.clone(),
        source: e,
    })?;
    let mut header = vec!["date".to_string()];
    header.extend(tickers.iter().cloned());
    writer
        .write_record(&header)
        .and_then(|_| {
            for (date, row) in dates.iter().zip(rows) {
                let mut record = vec![date.format("%Y-%m-%d").to_string()];
                record.extend(row.iter().map(|v| format!("{v}")));
                writer.write_record(&record)?;
            }
            writer.flush().map_err(csv::Error::from)
        })
        .map_err(|e| MarketDataError::Csv {
            path: display,
            source: e,
        })
}

/// Load a wide price CSV, inner-joining assets on dates.
///
/// Rows where any selected asset is missing a price are dropped and counted
/// in the report; prices are never interpolated.
pub fn load_prices(
    path: &Path,
    layout: &CsvLayout,
) -> Result<(PriceSeries, LoadReport), MarketDataError> {
    let table = read_wide_csv(path, layout)?;

    let mut dates = Vec::new();
    let mut prices = Vec::new();
    let mut dropped = 0usize;
    for (date, cells) in table.rows {
        if cells.iter().any(Option::is_none) {
            dropped += 1;
            continue;
        }
        dates.push(date);
        prices.push(cells.into_iter().map(Option::unwrap).collect());
    }
    if dates.is_empty() {
        return Err(MarketDataError::EmptyIntersection);
    }

    let report = LoadReport {
        rows_read: table.rows_read,
        rows_dropped: dropped,
        date_range: (dates[0], *dates.last().unwrap()),
        tickers: table.tickers.clone(),
    };
    let series = PriceSeries::new(dates, table.tickers, prices)?;
    Ok((series, report))
}

/// Simple daily returns: `r[t] = p[t]/p[t-1] - 1` per asset.
pub fn compute_returns(prices: &PriceSeries) -> Result<ReturnSeries, MarketDataError> {
    compute_returns_with(prices, ReturnKind::Simple)
}

pub fn compute_returns_with(
    prices: &PriceSeries,
    kind: ReturnKind,
) -> Result<ReturnSeries, MarketDataError> {
    if prices.len() < 2 {
        return Err(MarketDataError::SeriesTooShort {
            needed: 2,
            got: prices.len(),
        });
    }
    let dates = prices.dates()[1..].to_vec();
    let rows = prices
        .rows()
        .windows(2)
        .map(|pair| {
            pair[1]
                .iter()
                .zip(&pair[0])
                .map(|(now, prev)| match kind {
                    ReturnKind::Simple => now / prev - 1.0,
                    ReturnKind::Log => (now / prev).ln(),
                })
                .collect()
        })
        .collect();
    ReturnSeries::new(dates, prices.tickers().to_vec(), rows)
}

/// Rolling standard deviation (sample, divisor n − 1) of the
/// reference-portfolio return over `window` trading days.
///
/// The value at day `t` covers days `t - window + 1 ..= t`, so the output is
/// `window - 1` days shorter than the input.
pub fn rolling_volatility(
    returns: &ReturnSeries,
    reference_weights: &WeightVector,
    window: usize,
) -> Result<VolatilitySeries, MarketDataError> {
    rolling_volatility_with(returns, reference_weights, window, Divisor::Sample)
}

pub fn rolling_volatility_with(
    returns: &ReturnSeries,
    reference_weights: &WeightVector,
    window: usize,
    divisor: Divisor,
) -> Result<VolatilitySeries, MarketDataError> {
    if window < 2 {
        return Err(MarketDataError::WindowTooSmall(window));
    }
    if returns.len() < window {
        return Err(MarketDataError::SeriesTooShort {
            needed: window,
            got: returns.len(),
        });
    }
    let portfolio = returns.portfolio_returns(reference_weights)?;
    let values: Vec<f64> = portfolio
        .windows(window)
        .map(|w| stats::stdev(w, divisor))
        .collect();
    let dates = returns.dates()[window - 1..].to_vec();
    VolatilitySeries::new(dates, values, window)
}
