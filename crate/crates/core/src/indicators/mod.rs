//! Technical factors and the RSRS timing indicator.

mod ols;
mod rsrs;
mod technical;

use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

pub use ols::{ols_fit, OlsFit};
pub use rsrs::{
    rolling_ols, rsrs_from_prices, rsrs_scores, rsrs_series, rsrs_signal, rsrs_slope,
    RollingFit, RsrsParams, RsrsSeries, TimingSignal,
};
pub use technical::{
    technical_block, technical_from_prices, IndicatorVector, TechnicalSeries, ADX_PERIOD,
    BOLL_PERIOD, BOLL_WIDTH, CCI_PERIOD, CCI_SCALE, MACD_FAST, MACD_SLOW, MIN_HISTORY,
    RSI_PERIOD,
};

#[derive(Debug, Error)]
pub enum IndicatorError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("series too short: need {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("regressor has zero variance")]
    DegenerateRegressor,
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("unknown ticker {0}")]
    UnknownTicker(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Replaces undefined entries: the leading warm-up takes the first defined
/// value, later gaps carry the previous value forward. An entirely undefined
/// series becomes zeros.
pub fn fill_warmup(series: &[Option<f64>]) -> Vec<f64> {
    let Some(first) = series.iter().flatten().next().copied() else {
        return vec![0.0; series.len()];
    };
    let mut last = first;
    series
        .iter()
        .map(|v| {
            if let Some(x) = v {
                last = *x;
            }
            last
        })
        .collect()
}

/// Writes `date,beta,r2,std,cor,rightdev,signal` with empty cells for
/// undefined values.
pub fn write_rsrs_dump(
    path: &Path,
    dates: &[NaiveDate],
    rsrs: &RsrsSeries,
    rs_buy: f64,
    rs_sell: f64,
) -> Result<(), IndicatorError> {
    let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let mut out = String::from("date,beta,r2,std,cor,rightdev,signal\n");
    for (t, date) in dates.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            date,
            cell(rsrs.beta[t]),
            cell(rsrs.r2[t]),
            cell(rsrs.std[t]),
            cell(rsrs.cor[t]),
            cell(rsrs.rightdev[t]),
            rsrs_signal(rsrs.rightdev[t], rs_buy, rs_sell).as_str(),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
