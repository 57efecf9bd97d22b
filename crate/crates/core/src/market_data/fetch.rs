//! Optional remote download of daily bars with an on-disk CSV cache.
//!
//! The endpoint is queried as
//! `GET {endpoint}/{ticker}?period1={unix}&period2={unix}&interval=1d&events=history`
//! and must answer with a CSV whose header contains `Date, Open, High, Low,
//! Close, Volume` (case-insensitive, extra columns such as `Adj Close` are
//! ignored). Rows holding `null` are skipped. Fetched series are cached as
//! `<cache_dir>/<ticker>.csv` in the long schema; a cached ticker is always
//! served from disk.

use std::path::PathBuf;
use std::time::Duration;

use chrono::NaiveDate;

use super::{load_series_csv, write_bars_csv, Bar, DataError, PriceSeries};

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub endpoint: String,
    pub cache_dir: PathBuf,
    pub max_attempts: u32,
    pub timeout: Duration,
}

impl FetchOptions {
    pub fn new(endpoint: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            endpoint: endpoint.into(),
            cache_dir: cache_dir.into(),
            max_attempts: 3,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn cache_path(&self, ticker: &str) -> PathBuf {
        self.cache_dir.join(format!("{ticker}.csv"))
    }
}

/// Returns the bars of `ticker` within `[start, end]`, from cache when present.
pub fn fetch_remote(
    ticker: &str,
    start: NaiveDate,
    end: NaiveDate,
    opts: &FetchOptions,
) -> Result<PriceSeries, DataError> {
    if end < start {
        return Err(DataError::InvalidArgument(format!(
            "end {end} precedes start {start}"
        )));
    }
    let cache = opts.cache_path(ticker);
    let full = if cache.exists() {
        load_series_csv(&cache)?
    } else {
        let body = download(ticker, start, end, opts)?;
        let series = parse_payload(ticker, &body)?;
        write_bars_csv(&cache, &series.bars)?;
        series
    };
    let bars: Vec<Bar> = full
        .bars
        .into_iter()
        .filter(|b| b.date >= start && b.date <= end)
        .collect();
    if bars.is_empty() {
        return Err(DataError::EmptyRange {
            ticker: ticker.to_string(),
            start,
            end,
        });
    }
    PriceSeries::new(ticker, bars)
}

fn unix_seconds(d: NaiveDate) -> i64 {
    d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp()
}

fn download(
    ticker: &str,
    start: NaiveDate,
    end: NaiveDate,
    opts: &FetchOptions,
) -> Result<String, DataError> {
    let url = format!(
        "{}/{}?period1={}&period2={}&interval=1d&events=history",
        opts.endpoint.trim_end_matches('/'),
        ticker,
        unix_seconds(start),
        unix_seconds(end) + 86_400,
    );
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(opts.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut last = None;
    for attempt in 0..opts.max_attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(200 * u64::from(attempt)));
        }
        match try_download(&agent, &url) {
            Ok(body) => return Ok(body),
            Err(e) if e.is_retryable() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn try_download(agent: &ureq::Agent, url: &str) -> Result<String, DataError> {
    let http_err = |message: String, retryable: bool| DataError::Http {
        url: url.to_string(),
        message,
        retryable,
    };
    let mut resp = agent
        .get(url)
        .call()
        .map_err(|e| http_err(e.to_string(), true))?;
    let status = resp.status().as_u16();
    if status != 200 {
        let retryable = status == 429 || status >= 500;
        return Err(http_err(format!("status {status}"), retryable));
    }
    resp.body_mut()
        .read_to_string()
        .map_err(|e| http_err(e.to_string(), true))
}

/// Parses a download payload into a validated series.
pub(crate) fn parse_payload(ticker: &str, body: &str) -> Result<PriceSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(body.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| DataError::Payload(e.to_string()))?
        .clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| DataError::Payload(format!("missing column {name}")))
    };
    let idx = [
        col("date")?,
        col("open")?,
        col("high")?,
        col("low")?,
        col("close")?,
        col("volume")?,
    ];
    let mut bars = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Payload(e.to_string()))?;
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        if idx.iter().any(|&i| field(i).is_empty() || field(i) == "null") {
            continue;
        }
        let date = NaiveDate::parse_from_str(field(idx[0]), "%Y-%m-%d")
            .map_err(|e| DataError::Payload(format!("bad date {:?}: {e}", field(idx[0]))))?;
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| DataError::Payload(format!("bad number {:?}: {e}", field(i))))
        };
        bars.push(Bar {
            date,
            ticker: ticker.to_string(),
            open: num(idx[1])?,
            high: num(idx[2])?,
            low: num(idx[3])?,
            close: num(idx[4])?,
            volume: num(idx[5])?,
        });
    }
    if bars.is_empty() {
        return Err(DataError::Payload(format!("no rows for {ticker}")));
    }
    PriceSeries::new(ticker, bars)
}
