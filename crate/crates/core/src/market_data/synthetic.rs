//! Deterministic synthetic markets used as test substrates.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

use super::{Bar, DataError, PriceSeries, Universe};
use crate::rng::Rng;

const INITIAL_PRICE: f64 = 100.0;
const RANGE_NOISE: f64 = 0.01;

/// A stretch of days with fixed close dynamics and lower-shadow trend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub days: usize,
    /// Simple return per day in the noise-free path.
    pub drift: f64,
    /// Daily log-return volatility.
    pub vol: f64,
    /// Per-day change in how far the low sits below the close (fraction of
    /// close). Positive values widen the lower shadow, as in a sell-off.
    pub low_shadow_trend: f64,
    /// Amplitude of the uniform noise on both shadows.
    pub range_noise: f64,
}

impl Regime {
    pub fn new(days: usize, drift: f64, vol: f64) -> Self {
        Self {
            days,
            drift,
            vol,
            low_shadow_trend: 0.0,
            range_noise: RANGE_NOISE,
        }
    }
}

/// Geometric Brownian closes on `d` tickers over `t` weekdays.
///
/// `close_{t+1} = close_t · exp(ln(1 + drift) − vol²/2 + vol·z_t)`, so with
/// `vol = 0` the path grows by exactly `(1 + drift)` per day. Highs and lows
/// sit `|u|` above and below the close with `u ~ U(−0.01, 0.01)`.
pub fn synthetic_universe(
    seed: u64,
    d: usize,
    t: usize,
    drift: f64,
    vol: f64,
) -> Result<Universe, DataError> {
    regime_universe(seed, d, &[Regime::new(t, drift, vol)])
}

/// Piecewise synthetic market: regimes are concatenated in order.
pub fn regime_universe(seed: u64, d: usize, regimes: &[Regime]) -> Result<Universe, DataError> {
    let t: usize = regimes.iter().map(|r| r.days).sum();
    if d == 0 || t < 2 {
        return Err(DataError::InvalidArgument(format!(
            "synthetic universe needs d >= 1 and t >= 2 (got d={d}, t={t})"
        )));
    }
    if regimes.iter().any(|r| r.vol < 0.0 || r.drift <= -1.0 || r.range_noise < 0.0) {
        return Err(DataError::InvalidArgument(
            "regimes need vol >= 0, drift > -1 and range_noise >= 0".into(),
        ));
    }
    let calendar = weekday_calendar(t);
    let mut rng = Rng::seed_from_u64(seed);
    let mut series = Vec::with_capacity(d);
    for j in 0..d {
        let mut close = INITIAL_PRICE;
        let mut shadow = 0.0f64;
        let mut bars = Vec::with_capacity(t);
        let mut day = 0;
        for regime in regimes {
            let log_drift = (1.0 + regime.drift).ln() - 0.5 * regime.vol * regime.vol;
            for _ in 0..regime.days {
                if day > 0 {
                    let z: f64 = rng.sample(StandardNormal);
                    close *= (log_drift + regime.vol * z).exp();
                    shadow = (shadow + regime.low_shadow_trend).clamp(0.0, 0.5);
                }
                let noise = regime.range_noise;
                let up = sample_abs(&mut rng, noise);
                let down = (sample_abs(&mut rng, noise) + shadow).min(0.9);
                let high = close * (1.0 + up);
                let low = close * (1.0 - down);
                let open = low + (high - low) * rng.random::<f64>();
                let volume = 1e6 * (0.25 * rng.sample::<f64, _>(StandardNormal)).exp();
                bars.push(Bar {
                    date: calendar[day],
                    ticker: format!("SYN{j:02}"),
                    open: open.clamp(low, high),
                    high,
                    low,
                    close,
                    volume,
                });
                day += 1;
            }
        }
        series.push(PriceSeries::new(format!("SYN{j:02}"), bars)?);
    }
    Universe::from_series(series)
}

/// Regimes of the crash fixture: 100 days of steady up drift, a 40% fall
/// over 30 days during which the lower shadow widens, then 70 days of
/// recovery. Shadow noise is kept small so the RSRS slope reacts to the
/// shadow trend rather than to noise.
pub fn crash_regimes() -> [Regime; 3] {
    let calm = |days, drift| Regime {
        range_noise: 0.002,
        ..Regime::new(days, drift, 0.005)
    };
    let crash = Regime {
        low_shadow_trend: 0.005,
        ..calm(30, 0.6f64.powf(1.0 / 30.0) - 1.0)
    };
    [calm(100, 0.003), crash, calm(70, 0.006)]
}

/// One-stock crash market built from [`crash_regimes`].
pub fn crash_fixture(seed: u64) -> Result<Universe, DataError> {
    regime_universe(seed, 1, &crash_regimes())
}

/// One stock rising by exactly `drift` per day.
pub fn drift_fixture(days: usize, drift: f64) -> Result<Universe, DataError> {
    regime_universe(0, 1, &[Regime::new(days, drift, 0.0)])
}

fn sample_abs(rng: &mut Rng, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        0.0
    } else {
        rng.random_range(-amplitude..amplitude).abs()
    }
}

fn weekday_calendar(t: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(t);
    let mut d = NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date");
    while out.len() < t {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}
