use std::ops::Range;
use std::sync::Arc;

use chrono::NaiveDate;

use super::EnvError;
use crate::indicators::{fill_warmup, rsrs_from_prices, technical_from_prices, RsrsParams};
use crate::market_data::Universe;

/// Indicator block width per stock: seven technical factors plus RSRS.
pub const FEATURES_PER_STOCK: usize = 8;

/// Prices and indicator blocks for a whole universe, computed once.
///
/// Indicators are computed on the full calendar so that a later slice sees
/// the history before its first day. Warm-up gaps are back-filled with the
/// first defined value.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketFeatures {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    close: Vec<f64>,
    indicators: Vec<f64>,
    rightdev: Vec<Option<f64>>,
}

impl MarketFeatures {
    pub fn build(u: &Universe, rsrs: RsrsParams) -> Result<Self, EnvError> {
        let (t, d) = (u.num_days(), u.num_tickers());
        let mut indicators = vec![0.0; t * d * FEATURES_PER_STOCK];
        let mut rightdev = vec![None; t * d];
        for j in 0..d {
            let (high, low, close) = (u.high.column(j), u.low.column(j), u.close.column(j));
            let tech = technical_from_prices(&high, &low, &close)?;
            let scores = rsrs_from_prices(&high, &low, rsrs)?;
            let boll_width: Vec<Option<f64>> = tech
                .boll_upper
                .iter()
                .zip(&tech.boll_lower)
                .map(|(u, l)| Some((*u)? - (*l)?))
                .collect();
            let columns = [
                fill_warmup(&tech.macd),
                fill_warmup(&tech.sma30),
                fill_warmup(&tech.sma60),
                fill_warmup(&boll_width),
                fill_warmup(&tech.rsi),
                fill_warmup(&tech.cci),
                fill_warmup(&tech.adx),
                fill_warmup(&scores.rightdev),
            ];
            for day in 0..t {
                let base = (day * d + j) * FEATURES_PER_STOCK;
                for (k, col) in columns.iter().enumerate() {
                    indicators[base + k] = col[day];
                }
                rightdev[day * d + j] = scores.rightdev[day];
            }
        }
        Ok(Self {
            tickers: u.tickers().to_vec(),
            dates: u.calendar().to_vec(),
            close: u.close.as_slice().to_vec(),
            indicators,
            rightdev,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn num_days(&self) -> usize {
        self.dates.len()
    }

    pub fn num_stocks(&self) -> usize {
        self.tickers.len()
    }

    /// Day indices with `start <= date <= end`.
    pub fn day_range(&self, start: NaiveDate, end: NaiveDate) -> Range<usize> {
        let a = self.dates.partition_point(|d| *d < start);
        let b = self.dates.partition_point(|d| *d <= end);
        a..b.max(a)
    }
}

/// A contiguous run of days of a shared [`MarketFeatures`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSlice {
    features: Arc<MarketFeatures>,
    start: usize,
    end: usize,
}

impl EnvSlice {
    pub fn new(features: Arc<MarketFeatures>, range: Range<usize>) -> Result<Self, EnvError> {
        if range.end > features.num_days() || range.start > range.end {
            return Err(EnvError::InvalidConfig(format!(
                "slice {range:?} outside {} days",
                features.num_days()
            )));
        }
        if range.len() < 2 {
            return Err(EnvError::SliceTooShort(range.len()));
        }
        Ok(Self {
            features,
            start: range.start,
            end: range.end,
        })
    }

    pub fn full(features: Arc<MarketFeatures>) -> Result<Self, EnvError> {
        let n = features.num_days();
        Self::new(features, 0..n)
    }

    pub fn features(&self) -> &Arc<MarketFeatures> {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn num_stocks(&self) -> usize {
        self.features.num_stocks()
    }

    pub fn tickers(&self) -> &[String] {
        self.features.tickers()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.features.dates[self.start..self.end]
    }

    pub fn prices(&self, day: usize) -> &[f64] {
        let d = self.num_stocks();
        let t = self.start + day;
        &self.features.close[t * d..(t + 1) * d]
    }

    pub fn indicators(&self, day: usize) -> &[f64] {
        let w = self.num_stocks() * FEATURES_PER_STOCK;
        let t = self.start + day;
        &self.features.indicators[t * w..(t + 1) * w]
    }

    pub fn rightdev(&self, day: usize) -> &[Option<f64>] {
        let d = self.num_stocks();
        let t = self.start + day;
        &self.features.rightdev[t * d..(t + 1) * d]
    }
}
