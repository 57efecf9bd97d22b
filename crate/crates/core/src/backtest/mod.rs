//! Performance metrics of equity curves and report artifacts.
//!
//! Conventions: 252 trading days per year, the risk-free rate is an annual
//! rate converted to `rf/252` per day, and volatility uses the sample
//! (`n − 1`) standard deviation.

mod report;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::ols_fit;

pub use report::{format_sig6, render_table, write_report, yearly_returns, YearlyRow};

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("asset value {value} at index {index} is not positive")]
    NonPositive { index: usize, value: f64 },
    #[error("zero volatility: ratio undefined")]
    ZeroVolatility,
    #[error("zero drawdown: ratio undefined")]
    ZeroDrawdown,
    #[error("curve fields have mismatched lengths ({0})")]
    Misaligned(String),
    #[error("dates must be strictly increasing (index {0})")]
    UnorderedDates(usize),
    #[error("report i/o on {path}: {message}")]
    Io { path: String, message: String },
}

/// An asset trajectory with its per-step trace. `rewards`, `costs` and
/// `actions` are either empty or one shorter than `assets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub actions: Vec<Vec<i64>>,
}

impl EquityCurve {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<f64>) -> Result<Self, MetricError> {
        Self::with_trace(dates, assets, Vec::new(), Vec::new(), Vec::new())
    }

    pub fn with_trace(
        dates: Vec<NaiveDate>,
        assets: Vec<f64>,
        rewards: Vec<f64>,
        costs: Vec<f64>,
        actions: Vec<Vec<i64>>,
    ) -> Result<Self, MetricError> {
        if dates.len() != assets.len() {
            return Err(MetricError::Misaligned(format!(
                "{} dates, {} assets",
                dates.len(),
                assets.len()
            )));
        }
        let steps = assets.len().saturating_sub(1);
        for (name, len) in [("rewards", rewards.len()), ("costs", costs.len()), ("actions", actions.len())] {
            if len != 0 && len != steps {
                return Err(MetricError::Misaligned(format!("{len} {name} for {steps} steps")));
            }
        }
        check_positive(&assets)?;
        if let Some(i) = dates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(MetricError::UnorderedDates(i + 1));
        }
        Ok(Self {
            dates,
            assets,
            rewards,
            costs,
            actions,
        })
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }
}

fn check_positive(assets: &[f64]) -> Result<(), MetricError> {
    match assets.iter().position(|&a| !(a > 0.0 && a.is_finite())) {
        Some(index) => Err(MetricError::NonPositive {
            index,
            value: assets[index],
        }),
        None => Ok(()),
    }
}

fn need(assets: &[f64], n: usize) -> Result<(), MetricError> {
    if assets.len() < n {
        return Err(MetricError::TooShort {
            needed: n,
            got: assets.len(),
        });
    }
    check_positive(assets)
}

/// `ret_t = A_{t+1}/A_t − 1`.
pub fn daily_returns(assets: &[f64]) -> Result<Vec<f64>, MetricError> {
    need(assets, 2)?;
    Ok(assets.windows(2).map(|w| w[1] / w[0] - 1.0).collect())
}

pub fn cumulative_return(assets: &[f64]) -> Result<f64, MetricError> {
    need(assets, 2)?;
    Ok(assets[assets.len() - 1] / assets[0] - 1.0)
}

/// `(A_T/A_0)^(252/n) − 1` with `n` return periods.
pub fn annualized_return(assets: &[f64]) -> Result<f64, MetricError> {
    need(assets, 2)?;
    let n = (assets.len() - 1) as f64;
    Ok((assets[assets.len() - 1] / assets[0]).powf(TRADING_DAYS / n) - 1.0)
}

/// Sample standard deviation of `returns` times `√252`.
pub fn annualized_volatility(returns: &[f64]) -> Result<f64, MetricError> {
    if returns.len() < 2 {
        return Err(MetricError::TooShort {
            needed: 2,
            got: returns.len(),
        });
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() * TRADING_DAYS.sqrt())
}

/// Annualised mean excess return over annualised volatility.
pub fn sharpe(returns: &[f64], risk_free: f64) -> Result<f64, MetricError> {
    let vol = annualized_volatility(returns)?;
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    // Relative to the return scale so that float noise on constant returns
    // still counts as zero volatility.
    let scale = returns.iter().fold(0.0f64, |m, r| m.max(r.abs())).max(f64::MIN_POSITIVE);
    if vol <= 1e-12 * scale * TRADING_DAYS.sqrt() {
        return Err(MetricError::ZeroVolatility);
    }
    Ok((mean - risk_free / TRADING_DAYS) * TRADING_DAYS / vol)
}

/// `min_t A_t / max_{τ≤t} A_τ − 1`, in `[−1, 0]`.
pub fn max_drawdown(assets: &[f64]) -> Result<f64, MetricError> {
    need(assets, 1)?;
    let mut peak = assets[0];
    let mut worst = 0.0f64;
    for &a in assets {
        peak = peak.max(a);
        worst = worst.min(a / peak - 1.0);
    }
    Ok(worst)
}

pub fn calmar(assets: &[f64]) -> Result<f64, MetricError> {
    let mdd = max_drawdown(assets)?;
    if mdd == 0.0 {
        return Err(MetricError::ZeroDrawdown);
    }
    Ok(annualized_return(assets)? / mdd.abs())
}

/// R² of an OLS fit of cumulative log returns on the time index; 0 when
/// the curve is flat.
pub fn stability(assets: &[f64]) -> Result<f64, MetricError> {
    need(assets, 3)?;
    let y: Vec<f64> = assets.iter().map(|a| (a / assets[0]).ln()).collect();
    let x: Vec<f64> = (0..assets.len()).map(|i| i as f64).collect();
    Ok(ols_fit(&y, &x).map(|f| f.r2).unwrap_or(0.0))
}

/// Buy-and-hold equity `B0 · index_t / index_0`.
pub fn baseline_curve(dates: Vec<NaiveDate>, index: &[f64], initial_balance: f64) -> Result<EquityCurve, MetricError> {
    need(index, 1)?;
    let assets = index.iter().map(|p| initial_balance * p / index[0]).collect();
    EquityCurve::new(dates, assets)
}

/// The seven metrics of one curve; `None` where a metric is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub annualized_return: Option<f64>,
    pub cumulative_return: Option<f64>,
    pub annualized_volatility: Option<f64>,
    pub sharpe: Option<f64>,
    pub calmar: Option<f64>,
    pub stability: Option<f64>,
    pub max_drawdown: Option<f64>,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub periods: usize,
}

impl MetricsReport {
    pub fn compute(curve: &EquityCurve, risk_free: f64) -> Self {
        let a = &curve.assets;
        let returns = daily_returns(a).ok();
        Self {
            annualized_return: annualized_return(a).ok(),
            cumulative_return: cumulative_return(a).ok(),
            annualized_volatility: returns.as_deref().and_then(|r| annualized_volatility(r).ok()),
            sharpe: returns.as_deref().and_then(|r| sharpe(r, risk_free).ok()),
            calmar: calmar(a).ok(),
            stability: stability(a).ok(),
            max_drawdown: max_drawdown(a).ok(),
            start: curve.dates.first().copied(),
            end: curve.dates.last().copied(),
            periods: a.len().saturating_sub(1),
        }
    }

    /// Named metric values in display order.
    pub fn values(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("annualized_return", self.annualized_return),
            ("cumulative_return", self.cumulative_return),
            ("annualized_volatility", self.annualized_volatility),
            ("sharpe", self.sharpe),
            ("calmar", self.calmar),
            ("stability", self.stability),
            ("max_drawdown", self.max_drawdown),
        ]
    }

    /// Metric-wise arithmetic mean; a metric is `None` if any input lacks it.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        let first = reports.first()?;
        let avg = |f: fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = reports.iter().map(f).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(MetricsReport {
            annualized_return: avg(|r| r.annualized_return),
            cumulative_return: avg(|r| r.cumulative_return),
            annualized_volatility: avg(|r| r.annualized_volatility),
            sharpe: avg(|r| r.sharpe),
            calmar: avg(|r| r.calmar),
            stability: avg(|r| r.stability),
            max_drawdown: avg(|r| r.max_drawdown),
            start: first.start,
            end: first.end,
            periods: first.periods,
        })
    }
}
