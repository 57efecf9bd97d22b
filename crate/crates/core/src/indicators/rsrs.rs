//! Resistance/support relative strength.
//!
//! For each day the slope of daily highs regressed on daily lows over the
//! last `l` days measures how far resistance moves per unit move of support.
//! The slope is standardised over the last `m` defined slopes (the current
//! day included), weighted by the fit's R², and finally multiplied by the raw
//! slope again ("right-deviated" score) to form the timing signal.

use serde::{Deserialize, Serialize};

use super::{ols_fit, IndicatorError};
use crate::market_data::Universe;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsrsParams {
    /// Regression window in days.
    pub l: usize,
    /// Standardisation window in defined slopes.
    pub m: usize,
}

impl Default for RsrsParams {
    fn default() -> Self {
        Self { l: 10, m: 300 }
    }
}

/// Rolling high-on-low regression output.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingFit {
    pub beta: Vec<Option<f64>>,
    pub r2: Vec<Option<f64>>,
}

/// Per-day RSRS scores aligned with the calendar; `None` marks warm-up or
/// degenerate days.
#[derive(Debug, Clone, PartialEq)]
pub struct RsrsSeries {
    pub beta: Vec<Option<f64>>,
    pub r2: Vec<Option<f64>>,
    pub std: Vec<Option<f64>>,
    pub cor: Vec<Option<f64>>,
    pub rightdev: Vec<Option<f64>>,
}

impl RsrsSeries {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimingSignal {
    Buy,
    Sell,
    Hold,
}

impl TimingSignal {
    pub fn as_str(self) -> &'static str {
        match self {
            TimingSignal::Buy => "buy",
            TimingSignal::Sell => "sell",
            TimingSignal::Hold => "hold",
        }
    }
}

/// Slope and R² of `high ~ low` over each trailing window of `l` days.
/// Days before `l − 1` and windows with constant lows are `None`.
pub fn rolling_ols(high: &[f64], low: &[f64], l: usize) -> Result<RollingFit, IndicatorError> {
    if high.len() != low.len() {
        return Err(IndicatorError::LengthMismatch {
            left: high.len(),
            right: low.len(),
        });
    }
    if l < 2 {
        return Err(IndicatorError::InvalidWindow(format!(
            "regression window must be >= 2, got {l}"
        )));
    }
    if l > high.len() {
        return Err(IndicatorError::TooShort {
            needed: l,
            got: high.len(),
        });
    }
    let n = high.len();
    let mut beta = vec![None; n];
    let mut r2 = vec![None; n];
    for t in l - 1..n {
        let lo = t + 1 - l;
        match ols_fit(&high[lo..=t], &low[lo..=t]) {
            Ok(fit) => {
                beta[t] = Some(fit.beta);
                r2[t] = Some(fit.r2);
            }
            Err(IndicatorError::DegenerateRegressor) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(RollingFit { beta, r2 })
}

/// Rolling slope for one ticker of the universe.
pub fn rsrs_slope(u: &Universe, ticker: &str, l: usize) -> Result<RollingFit, IndicatorError> {
    let d = u
        .ticker_index(ticker)
        .ok_or_else(|| IndicatorError::UnknownTicker(ticker.to_string()))?;
    rolling_ols(&u.high.column(d), &u.low.column(d), l)
}

/// Standardised, R²-weighted and right-deviated scores.
///
/// The mean and population standard deviation are taken over the last `m`
/// defined slopes up to and including day `t`. A vanishing deviation leaves
/// the day undefined.
pub fn rsrs_scores(
    beta: &[Option<f64>],
    r2: &[Option<f64>],
    m: usize,
) -> Result<RsrsSeries, IndicatorError> {
    if beta.len() != r2.len() {
        return Err(IndicatorError::LengthMismatch {
            left: beta.len(),
            right: r2.len(),
        });
    }
    if m < 2 {
        return Err(IndicatorError::InvalidWindow(format!(
            "standardisation window must be >= 2, got {m}"
        )));
    }
    let n = beta.len();
    let mut std = vec![None; n];
    let mut cor = vec![None; n];
    let mut rightdev = vec![None; n];
    // Positions of defined slopes seen so far.
    let mut defined: Vec<usize> = Vec::with_capacity(n);
    for t in 0..n {
        let (Some(b), Some(r)) = (beta[t], r2[t]) else {
            continue;
        };
        defined.push(t);
        if defined.len() < m {
            continue;
        }
        let window = &defined[defined.len() - m..];
        let (mut count, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
        for &i in window {
            let x = beta[i].expect("defined slope");
            count += 1.0;
            let delta = x - mean;
            mean += delta / count;
            m2 += delta * (x - mean);
        }
        let sigma = (m2 / count).max(0.0).sqrt();
        if sigma <= 1e-12 * mean.abs().max(1.0) {
            continue;
        }
        let s = (b - mean) / sigma;
        let c = s * r;
        std[t] = Some(s);
        cor[t] = Some(c);
        rightdev[t] = Some(c * b);
    }
    Ok(RsrsSeries {
        beta: beta.to_vec(),
        r2: r2.to_vec(),
        std,
        cor,
        rightdev,
    })
}

/// Full pipeline from a ticker's highs and lows.
pub fn rsrs_from_prices(
    high: &[f64],
    low: &[f64],
    params: RsrsParams,
) -> Result<RsrsSeries, IndicatorError> {
    let fit = rolling_ols(high, low, params.l)?;
    rsrs_scores(&fit.beta, &fit.r2, params.m)
}

pub fn rsrs_series(
    u: &Universe,
    ticker: &str,
    params: RsrsParams,
) -> Result<RsrsSeries, IndicatorError> {
    let fit = rsrs_slope(u, ticker, params.l)?;
    rsrs_scores(&fit.beta, &fit.r2, params.m)
}

/// Threshold rule with strict inequalities; undefined scores hold.
pub fn rsrs_signal(rightdev: Option<f64>, rs_buy: f64, rs_sell: f64) -> TimingSignal {
    match rightdev {
        Some(x) if x > rs_buy => TimingSignal::Buy,
        Some(x) if x < rs_sell => TimingSignal::Sell,
        _ => TimingSignal::Hold,
    }
}
