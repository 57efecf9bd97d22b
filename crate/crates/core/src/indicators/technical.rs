//! Standard technical factors of the observation block.
//!
//! | factor | definition |
//! |--------|------------|
//! | MACD   | EMA12 − EMA26 of close (EMA seeded with the first close) |
//! | SMA30  | 30-day simple mean of close |
//! | SMA60  | 60-day simple mean of close |
//! | BOLL   | SMA20 ± 2·σ20 (population deviation) |
//! | RSI    | 14-day, Wilder smoothing |
//! | CCI    | 20-day on typical price, 0.015 scaling |
//! | ADX    | 14-day, Wilder smoothing |
//!
//! Values inside each factor's warm-up are `None`.

use super::IndicatorError;
use crate::market_data::Universe;

pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;
pub const BOLL_PERIOD: usize = 20;
pub const BOLL_WIDTH: f64 = 2.0;
pub const RSI_PERIOD: usize = 14;
pub const CCI_PERIOD: usize = 20;
pub const CCI_SCALE: f64 = 0.015;
pub const ADX_PERIOD: usize = 14;
/// Longest warm-up among the factors (SMA60).
pub const MIN_HISTORY: usize = 60;

/// All factors of one stock on one day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorVector {
    pub macd: f64,
    pub sma30: f64,
    pub sma60: f64,
    pub boll_upper: f64,
    pub boll_lower: f64,
    pub rsi: f64,
    pub cci: f64,
    pub adx: f64,
}

/// Column-wise factor series for one stock.
#[derive(Debug, Clone, PartialEq)]
pub struct TechnicalSeries {
    pub macd: Vec<Option<f64>>,
    pub sma30: Vec<Option<f64>>,
    pub sma60: Vec<Option<f64>>,
    pub boll_upper: Vec<Option<f64>>,
    pub boll_lower: Vec<Option<f64>>,
    pub rsi: Vec<Option<f64>>,
    pub cci: Vec<Option<f64>>,
    pub adx: Vec<Option<f64>>,
}

impl TechnicalSeries {
    pub fn len(&self) -> usize {
        self.macd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.macd.is_empty()
    }

    /// The full vector on day `t`, if every factor is past warm-up.
    pub fn vector(&self, t: usize) -> Option<IndicatorVector> {
        Some(IndicatorVector {
            macd: self.macd[t]?,
            sma30: self.sma30[t]?,
            sma60: self.sma60[t]?,
            boll_upper: self.boll_upper[t]?,
            boll_lower: self.boll_lower[t]?,
            rsi: self.rsi[t]?,
            cci: self.cci[t]?,
            adx: self.adx[t]?,
        })
    }
}

pub fn technical_block(u: &Universe, ticker: &str) -> Result<TechnicalSeries, IndicatorError> {
    let d = u
        .ticker_index(ticker)
        .ok_or_else(|| IndicatorError::UnknownTicker(ticker.to_string()))?;
    technical_from_prices(&u.high.column(d), &u.low.column(d), &u.close.column(d))
}

pub fn technical_from_prices(
    high: &[f64],
    low: &[f64],
    close: &[f64],
) -> Result<TechnicalSeries, IndicatorError> {
    let n = close.len();
    if high.len() != n || low.len() != n {
        return Err(IndicatorError::LengthMismatch {
            left: close.len(),
            right: high.len().min(low.len()),
        });
    }
    if n < MIN_HISTORY {
        return Err(IndicatorError::TooShort {
            needed: MIN_HISTORY,
            got: n,
        });
    }
    let fast = ema(close, MACD_FAST);
    let slow = ema(close, MACD_SLOW);
    let macd = (0..n)
        .map(|t| (t + 1 >= MACD_SLOW).then(|| fast[t] - slow[t]))
        .collect();
    let (mid, sd) = rolling_mean_std(close, BOLL_PERIOD);
    let boll_upper = mid
        .iter()
        .zip(&sd)
        .map(|(m, s)| Some((*m)? + BOLL_WIDTH * (*s)?))
        .collect();
    let boll_lower = mid
        .iter()
        .zip(&sd)
        .map(|(m, s)| Some((*m)? - BOLL_WIDTH * (*s)?))
        .collect();
    Ok(TechnicalSeries {
        macd,
        sma30: rolling_mean_std(close, 30).0,
        sma60: rolling_mean_std(close, 60).0,
        boll_upper,
        boll_lower,
        rsi: rsi(close, RSI_PERIOD),
        cci: cci(high, low, close, CCI_PERIOD),
        adx: adx(high, low, close, ADX_PERIOD),
    })
}

fn ema(x: &[f64], period: usize) -> Vec<f64> {
    let alpha = 2.0 / (period as f64 + 1.0);
    let mut out = Vec::with_capacity(x.len());
    let mut e = x[0];
    for &v in x {
        e += alpha * (v - e);
        out.push(e);
    }
    out
}

/// Trailing mean and population standard deviation, exact per window.
fn rolling_mean_std(x: &[f64], period: usize) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let mut mean = vec![None; x.len()];
    let mut sd = vec![None; x.len()];
    for t in period.saturating_sub(1)..x.len() {
        let w = &x[t + 1 - period..=t];
        let m = w.iter().sum::<f64>() / period as f64;
        let var = w.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / period as f64;
        mean[t] = Some(m);
        sd[t] = Some(var.sqrt());
    }
    (mean, sd)
}

fn rsi(close: &[f64], period: usize) -> Vec<Option<f64>> {
    let n = close.len();
    let mut out = vec![None; n];
    if n <= period {
        return out;
    }
    let p = period as f64;
    let (mut gain, mut loss) = (0.0, 0.0);
    for t in 1..=period {
        let ch = close[t] - close[t - 1];
        gain += ch.max(0.0);
        loss += (-ch).max(0.0);
    }
    gain /= p;
    loss /= p;
    out[period] = Some(rsi_value(gain, loss));
    for t in period + 1..n {
        let ch = close[t] - close[t - 1];
        gain = (gain * (p - 1.0) + ch.max(0.0)) / p;
        loss = (loss * (p - 1.0) + (-ch).max(0.0)) / p;
        out[t] = Some(rsi_value(gain, loss));
    }
    out
}

fn rsi_value(gain: f64, loss: f64) -> f64 {
    if loss == 0.0 {
        if gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + gain / loss)
    }
}

fn cci(high: &[f64], low: &[f64], close: &[f64], period: usize) -> Vec<Option<f64>> {
    let tp: Vec<f64> = (0..close.len())
        .map(|t| (high[t] + low[t] + close[t]) / 3.0)
        .collect();
    let (mean, _) = rolling_mean_std(&tp, period);
    (0..tp.len())
        .map(|t| {
            let m = mean[t]?;
            let w = &tp[t + 1 - period..=t];
            let dev = w.iter().map(|v| (v - m).abs()).sum::<f64>() / period as f64;
            Some(if dev > 0.0 {
                (tp[t] - m) / (CCI_SCALE * dev)
            } else {
                0.0
            })
        })
        .collect()
}

fn adx(high: &[f64], low: &[f64], close: &[f64], period: usize) -> Vec<Option<f64>> {
    let n = close.len();
    let mut out = vec![None; n];
    if n < 2 * period {
        return out;
    }
    let p = period as f64;
    let (mut tr_s, mut plus_s, mut minus_s) = (0.0, 0.0, 0.0);
    let mut dx_sum = 0.0;
    let mut adx_prev = 0.0;
    for t in 1..n {
        let up = high[t] - high[t - 1];
        let down = low[t - 1] - low[t];
        let plus_dm = if up > down && up > 0.0 { up } else { 0.0 };
        let minus_dm = if down > up && down > 0.0 { down } else { 0.0 };
        let tr = (high[t] - low[t])
            .max((high[t] - close[t - 1]).abs())
            .max((low[t] - close[t - 1]).abs());
        if t <= period {
            tr_s += tr;
            plus_s += plus_dm;
            minus_s += minus_dm;
            if t < period {
                continue;
            }
        } else {
            tr_s = tr_s - tr_s / p + tr;
            plus_s = plus_s - plus_s / p + plus_dm;
            minus_s = minus_s - minus_s / p + minus_dm;
        }
        let (plus_di, minus_di) = if tr_s > 0.0 {
            (100.0 * plus_s / tr_s, 100.0 * minus_s / tr_s)
        } else {
            (0.0, 0.0)
        };
        let di_sum = plus_di + minus_di;
        let dx = if di_sum > 0.0 {
            100.0 * (plus_di - minus_di).abs() / di_sum
        } else {
            0.0
        };
        // DX exists from t = period; the first ADX averages `period` of them.
        let k = t - period + 1;
        if k < period {
            dx_sum += dx;
        } else if k == period {
            adx_prev = (dx_sum + dx) / p;
            out[t] = Some(adx_prev);
        } else {
            adx_prev = (adx_prev * (p - 1.0) + dx) / p;
            out[t] = Some(adx_prev);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_series() {
        let c = vec![42.0; 80];
        let s = technical_from_prices(&c, &c, &c).unwrap();
        let v = s.vector(79).unwrap();
        assert_eq!(v.sma30, 42.0);
        assert_eq!(v.sma60, 42.0);
        assert!(v.macd.abs() < 1e-12);
        assert!((v.boll_upper - 42.0).abs() < 1e-12);
        assert!((v.boll_lower - 42.0).abs() < 1e-12);
        assert_eq!(v.cci, 0.0);
        assert_eq!(v.adx, 0.0);
    }

    #[test]
    fn rising_closes_saturate_rsi() {
        let c: Vec<f64> = (0..70).map(|i| 10.0 + i as f64).collect();
        let s = technical_from_prices(&c, &c, &c).unwrap();
        assert!(s.rsi[..RSI_PERIOD].iter().all(Option::is_none));
        assert!(s.rsi[RSI_PERIOD..].iter().all(|r| *r == Some(100.0)));
    }

    #[test]
    fn warmups() {
        let c: Vec<f64> = (0..70).map(|i| 10.0 + (i as f64).sin()).collect();
        let s = technical_from_prices(&c, &c, &c).unwrap();
        let first = |v: &[Option<f64>]| v.iter().position(Option::is_some).unwrap();
        assert_eq!(first(&s.macd), MACD_SLOW - 1);
        assert_eq!(first(&s.sma30), 29);
        assert_eq!(first(&s.sma60), 59);
        assert_eq!(first(&s.boll_upper), BOLL_PERIOD - 1);
        assert_eq!(first(&s.rsi), RSI_PERIOD);
        assert_eq!(first(&s.cci), CCI_PERIOD - 1);
        assert_eq!(first(&s.adx), 2 * ADX_PERIOD - 1);
    }

    #[test]
    fn short_history_is_rejected() {
        let c = vec![1.0; MIN_HISTORY - 1];
        assert!(matches!(
            technical_from_prices(&c, &c, &c),
            Err(IndicatorError::TooShort { .. })
        ));
    }
}
