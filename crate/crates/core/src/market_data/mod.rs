//! Daily OHLCV market data: loading, validation, calendar alignment and splits.
//!
//! Input files use a long format with one row per `(date, ticker)`:
//!
//! ```text
//! date,ticker,open,high,low,close,volume
//! 2020-01-02,AAA,10.0,10.5,9.8,10.2,120000
//! ```
//!
//! Loading keeps only the dates on which every ticker traded (inner join);
//! missing cells are never imputed.

mod fetch;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fetch::{fetch_remote, FetchOptions};
pub use synthetic::{
    crash_fixture, crash_regimes, drift_fixture, regime_universe, synthetic_universe, Regime,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{source_name}: line {line}: {message}")]
    Malformed {
        source_name: String,
        line: u64,
        message: String,
    },
    #[error("invalid bar for {ticker} on {date}: {message}")]
    InvalidBar {
        ticker: String,
        date: NaiveDate,
        message: String,
    },
    #[error("duplicate bar for {ticker} on {date}")]
    DuplicateDate { ticker: String, date: NaiveDate },
    #[error("no date is shared by every ticker")]
    EmptyCalendar,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("http request for {url} failed{}: {message}", if *retryable { " (retryable)" } else { "" })]
    Http {
        url: String,
        message: String,
        retryable: bool,
    },
    #[error("unparseable payload: {0}")]
    Payload(String),
    #[error("no bars for {ticker} between {start} and {end}")]
    EmptyRange {
        ticker: String,
        start: NaiveDate,
        end: NaiveDate,
    },
}

impl DataError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, DataError::Http { retryable: true, .. })
    }
}

/// One daily bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub date: NaiveDate,
    pub ticker: String,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |message: &str| DataError::InvalidBar {
            ticker: self.ticker.clone(),
            date: self.date,
            message: message.to_string(),
        };
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(bad("prices must be finite and strictly positive"));
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(bad("volume must be finite and non-negative"));
        }
        if self.low > self.open.min(self.close) {
            return Err(bad("low is above open/close"));
        }
        if self.high < self.open.max(self.close) {
            return Err(bad("high is below open/close"));
        }
        Ok(())
    }
}

/// Time-ordered bars of a single ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub ticker: String,
    pub bars: Vec<Bar>,
}

impl PriceSeries {
    /// Sorts by date and rejects duplicates and invalid bars.
    pub fn new(ticker: impl Into<String>, mut bars: Vec<Bar>) -> Result<Self, DataError> {
        let ticker = ticker.into();
        bars.sort_by_key(|b| b.date);
        for w in bars.windows(2) {
            if w[0].date == w[1].date {
                return Err(DataError::DuplicateDate {
                    ticker: ticker.clone(),
                    date: w[0].date,
                });
            }
        }
        for b in &bars {
            b.validate()?;
        }
        Ok(Self { ticker, bars })
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }
}

/// Row-major `T × D` matrix of one field across the universe.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Panel {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "panel shape mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.data[t * self.cols + d]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.rows).map(|t| self.get(t, d)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn slice_rows(&self, range: Range<usize>) -> Panel {
        let data = self.data[range.start * self.cols..range.end * self.cols].to_vec();
        Panel::new(range.len(), self.cols, data)
    }
}

/// `D` tickers aligned on a shared calendar of `T` trading days.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    tickers: Vec<String>,
    calendar: Vec<NaiveDate>,
    pub open: Panel,
    pub high: Panel,
    pub low: Panel,
    pub close: Panel,
    pub volume: Panel,
}

impl Universe {
    /// Inner-joins the series on date. Columns follow the order of `series`.
    pub fn from_series(series: Vec<PriceSeries>) -> Result<Self, DataError> {
        if series.is_empty() {
            return Err(DataError::InvalidArgument("no tickers".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &series {
            if !seen.insert(s.ticker.clone()) {
                return Err(DataError::InvalidArgument(format!(
                    "ticker {} appears twice",
                    s.ticker
                )));
            }
        }
        let mut common: BTreeSet<NaiveDate> = series[0].bars.iter().map(|b| b.date).collect();
        for s in &series[1..] {
            let dates: BTreeSet<NaiveDate> = s.bars.iter().map(|b| b.date).collect();
            common = common.intersection(&dates).copied().collect();
        }
        if common.is_empty() {
            return Err(DataError::EmptyCalendar);
        }
        let calendar: Vec<NaiveDate> = common.into_iter().collect();
        let (t, d) = (calendar.len(), series.len());
        let mut fields = vec![vec![0.0; t * d]; 5];
        for (j, s) in series.iter().enumerate() {
            let mut bars = s.bars.iter().filter(|b| calendar.binary_search(&b.date).is_ok());
            for i in 0..t {
                let b = bars.next().expect("aligned bar");
                debug_assert_eq!(b.date, calendar[i]);
                for (f, v) in [b.open, b.high, b.low, b.close, b.volume].into_iter().enumerate() {
                    fields[f][i * d + j] = v;
                }
            }
        }
        let mut it = fields.into_iter().map(|data| Panel::new(t, d, data));
        Ok(Self {
            tickers: series.into_iter().map(|s| s.ticker).collect(),
            calendar,
            open: it.next().unwrap(),
            high: it.next().unwrap(),
            low: it.next().unwrap(),
            close: it.next().unwrap(),
            volume: it.next().unwrap(),
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn calendar(&self) -> &[NaiveDate] {
        &self.calendar
    }

    pub fn num_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn num_tickers(&self) -> usize {
        self.tickers.len()
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    /// Reconstructs the per-ticker series (useful for re-alignment and export).
    pub fn to_series(&self) -> Vec<PriceSeries> {
        (0..self.num_tickers())
            .map(|d| PriceSeries {
                ticker: self.tickers[d].clone(),
                bars: (0..self.num_days()).map(|t| self.bar(t, d)).collect(),
            })
            .collect()
    }

    pub fn bar(&self, t: usize, d: usize) -> Bar {
        Bar {
            date: self.calendar[t],
            ticker: self.tickers[d].clone(),
            open: self.open.get(t, d),
            high: self.high.get(t, d),
            low: self.low.get(t, d),
            close: self.close.get(t, d),
            volume: self.volume.get(t, d),
        }
    }

    /// Restricts to the given day range.
    pub fn slice_days(&self, range: Range<usize>) -> Result<Universe, DataError> {
        if range.is_empty() || range.end > self.num_days() {
            return Err(DataError::InvalidArgument(format!(
                "day range {range:?} outside calendar of {} days",
                self.num_days()
            )));
        }
        Ok(Universe {
            tickers: self.tickers.clone(),
            calendar: self.calendar[range.clone()].to_vec(),
            open: self.open.slice_rows(range.clone()),
            high: self.high.slice_rows(range.clone()),
            low: self.low.slice_rows(range.clone()),
            close: self.close.slice_rows(range.clone()),
            volume: self.volume.slice_rows(range),
        })
    }

    /// Keeps the named tickers, in the order given.
    pub fn select_tickers(&self, tickers: &[String]) -> Result<Universe, DataError> {
        let series = self.to_series();
        let mut picked = Vec::with_capacity(tickers.len());
        for t in tickers {
            let s = series
                .iter()
                .find(|s| &s.ticker == t)
                .ok_or_else(|| DataError::InvalidArgument(format!("unknown ticker {t}")))?;
            picked.push(s.clone());
        }
        Universe::from_series(picked)
    }

    /// Writes the universe in the long CSV schema.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut bars = Vec::with_capacity(self.num_days() * self.num_tickers());
        for t in 0..self.num_days() {
            for d in 0..self.num_tickers() {
                bars.push(self.bar(t, d));
            }
        }
        write_bars_csv(path, &bars)
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    date: String,
    ticker: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

/// Parses long-format CSV text into per-ticker series (tickers sorted).
pub fn parse_csv<R: Read>(reader: R, source_name: &str) -> Result<Vec<PriceSeries>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| malformed(source_name, 1, e.to_string()))?
        .clone();
    let expected = ["date", "ticker", "open", "high", "low", "close", "volume"];
    if header.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(malformed(
            source_name,
            1,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut by_ticker: BTreeMap<String, Vec<Bar>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(source_name, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: CsvRow = record
            .deserialize(Some(&header))
            .map_err(|e| malformed(source_name, line, e.to_string()))?;
        let date = NaiveDate::parse_from_str(row.date.trim(), "%Y-%m-%d")
            .map_err(|e| malformed(source_name, line, format!("bad date {:?}: {e}", row.date)))?;
        let bar = Bar {
            date,
            ticker: row.ticker.trim().to_string(),
            open: row.open,
            high: row.high,
            low: row.low,
            close: row.close,
            volume: row.volume,
        };
        bar.validate()?;
        by_ticker.entry(bar.ticker.clone()).or_default().push(bar);
    }
    by_ticker
        .into_iter()
        .map(|(ticker, bars)| PriceSeries::new(ticker, bars))
        .collect()
}

fn malformed(source_name: &str, line: u64, message: String) -> DataError {
    DataError::Malformed {
        source_name: source_name.to_string(),
        line,
        message,
    }
}

/// Loads a long-format CSV file and aligns all tickers on their common dates.
pub fn load_csv(path: &Path) -> Result<Universe, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let series = parse_csv(file, &path.display().to_string())?;
    if series.is_empty() {
        return Err(DataError::EmptyCalendar);
    }
    Universe::from_series(series)
}

/// Loads one single-ticker file (cache layout) as a series.
pub fn load_series_csv(path: &Path) -> Result<PriceSeries, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut series = parse_csv(file, &path.display().to_string())?;
    match series.len() {
        1 => Ok(series.remove(0)),
        n => Err(DataError::InvalidArgument(format!(
            "{} holds {n} tickers, expected one",
            path.display()
        ))),
    }
}

pub fn write_bars_csv(path: &Path, bars: &[Bar]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut out = String::from("date,ticker,open,high,low,close,volume\n");
    for b in bars {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            b.date, b.ticker, b.open, b.high, b.low, b.close, b.volume
        ));
    }
    File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(io_err)
}

/// Splits the calendar into `[.., train_end]`, `(train_end, val_end]` and
/// `(val_end, ..]`. Each part must be non-empty.
pub fn split_by_dates(
    u: &Universe,
    train_end: NaiveDate,
    val_end: NaiveDate,
) -> Result<(Universe, Universe, Universe), DataError> {
    if train_end >= val_end {
        return Err(DataError::InvalidArgument(format!(
            "train_end {train_end} must precede val_end {val_end}"
        )));
    }
    let cal = u.calendar();
    let (first, last) = (cal[0], cal[cal.len() - 1]);
    if train_end < first || val_end >= last {
        return Err(DataError::InvalidArgument(format!(
            "split boundaries {train_end}/{val_end} must lie inside {first}..{last} with a non-empty test part"
        )));
    }
    let a = cal.partition_point(|d| *d <= train_end);
    let b = cal.partition_point(|d| *d <= val_end);
    if a == 0 || a == b || b == cal.len() {
        return Err(DataError::InvalidArgument(format!(
            "split at {train_end}/{val_end} leaves an empty part"
        )));
    }
    Ok((
        u.slice_days(0..a)?,
        u.slice_days(a..b)?,
        u.slice_days(b..cal.len())?,
    ))
}

const TURNOVER_BASE_WINDOW: usize = 20;

/// Turnover proxy per ticker: `volume_t / trailing-20-day mean volume`,
/// averaged over the last `window` days. The trailing mean includes day `t`
/// and shrinks to the available history near the start of the calendar.
pub fn turnover_proxy(u: &Universe, window: usize) -> Result<Vec<f64>, DataError> {
    let t_len = u.num_days();
    if window == 0 || window > t_len {
        return Err(DataError::InvalidArgument(format!(
            "turnover window {window} must be in 1..={t_len}"
        )));
    }
    Ok((0..u.num_tickers())
        .map(|d| {
            let vol = u.volume.column(d);
            let ratios = (t_len - window..t_len).map(|t| {
                let lo = (t + 1).saturating_sub(TURNOVER_BASE_WINDOW);
                let base = vol[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64;
                if base > 0.0 {
                    vol[t] / base
                } else {
                    0.0
                }
            });
            ratios.sum::<f64>() / window as f64
        })
        .collect())
}

/// The `k` tickers with the lowest proxy; ties go to the lexicographically
/// smaller ticker.
pub fn lowest_k(proxies: &[(String, f64)], k: usize) -> Vec<String> {
    let mut sorted: Vec<&(String, f64)> = proxies.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    sorted.into_iter().take(k).map(|(t, _)| t.clone()).collect()
}

pub fn rank_by_turnover(u: &Universe, window: usize, k: usize) -> Result<Vec<String>, DataError> {
    if k == 0 || k > u.num_tickers() {
        return Err(DataError::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            u.num_tickers()
        )));
    }
    let proxies = turnover_proxy(u, window)?;
    let pairs: Vec<(String, f64)> = u.tickers().iter().cloned().zip(proxies).collect();
    Ok(lowest_k(&pairs, k))
}
