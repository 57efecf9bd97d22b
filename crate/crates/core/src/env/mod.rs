//! Multi-stock trading MDP.
//!
//! State: cash balance, close prices, integer holdings and an 8-wide
//! indicator block per stock. Actions are integer share counts per stock,
//! bounded by `hmax`. Trades settle at the current close, a proportional
//! transaction cost is charged once against cash, and the reward is the
//! percentage change of total asset value.

mod features;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{EnvSlice, MarketFeatures, FEATURES_PER_STOCK};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("slice has {0} days, need at least 2")]
    SliceTooShort(usize),
    #[error("episode is done; reset before stepping")]
    EpisodeDone,
    #[error("action has {got} entries, universe has {expected} stocks")]
    ActionShape { expected: usize, got: usize },
    #[error("action entry {index} = {value} exceeds hmax {hmax}")]
    ActionBound { index: usize, value: i64, hmax: i64 },
    #[error(transparent)]
    Indicator(#[from] crate::indicators::IndicatorError),
    #[error(transparent)]
    Data(#[from] crate::market_data::DataError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub initial_balance: f64,
    pub hmax: i64,
    pub cost_percentage: f64,
    pub rs_buy: f64,
    pub rs_sell: f64,
    pub override_enabled: bool,
    /// Multiply the reward by 100 (percentage points).
    pub percent_reward: bool,
    /// Subtract the transaction cost a second time in the reward numerator.
    pub double_cost_in_reward: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            initial_balance: 1e6,
            hmax: 100,
            cost_percentage: 0.001,
            rs_buy: 1.0,
            rs_sell: -0.4,
            override_enabled: false,
            percent_reward: true,
            double_cost_in_reward: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |m: String| Err(EnvError::InvalidConfig(m));
        if !(self.initial_balance.is_finite() && self.initial_balance > 0.0) {
            return fail(format!("initial_balance {} must be positive", self.initial_balance));
        }
        if self.hmax < 1 {
            return fail(format!("hmax {} must be >= 1", self.hmax));
        }
        if !(0.0..1.0).contains(&self.cost_percentage) {
            return fail(format!("cost_percentage {} must be in [0, 1)", self.cost_percentage));
        }
        if self.rs_sell >= self.rs_buy {
            return fail(format!(
                "rs_sell {} must be below rs_buy {}",
                self.rs_sell, self.rs_buy
            ));
        }
        Ok(())
    }
}

/// Integer share orders per stock; positive buys, negative sells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub shares: Vec<i64>,
}

impl Action {
    pub fn new(shares: Vec<i64>, hmax: i64) -> Result<Self, EnvError> {
        if let Some((index, &value)) = shares.iter().enumerate().find(|(_, s)| s.abs() > hmax) {
            return Err(EnvError::ActionBound { index, value, hmax });
        }
        Ok(Self { shares })
    }

    pub fn hold(d: usize) -> Self {
        Self { shares: vec![0; d] }
    }

    /// Scales a normalized action in `[-1, 1]` by `hmax`, rounding toward zero.
    pub fn from_normalized(a: &[f64], hmax: i64) -> Self {
        let h = hmax as f64;
        Self {
            shares: a
                .iter()
                .map(|x| (x.clamp(-1.0, 1.0) * h).trunc() as i64)
                .collect(),
        }
    }

    pub fn to_normalized(&self, hmax: i64) -> Vec<f64> {
        self.shares.iter().map(|&s| s as f64 / hmax as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub balance: f64,
    pub prices: Vec<f64>,
    pub holdings: Vec<i64>,
    /// `D × FEATURES_PER_STOCK`, stock-major, warm-up values back-filled.
    pub indicators: Vec<f64>,
    /// Raw right-deviated RSRS score per stock (`None` in warm-up).
    pub rightdev: Vec<Option<f64>>,
    pub day_index: usize,
}

impl EnvState {
    pub fn num_stocks(&self) -> usize {
        self.prices.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub executed: Action,
    pub cost: f64,
}

/// `B + Pᵀ·W`.
pub fn asset_value(state: &EnvState) -> f64 {
    state.balance
        + state
            .prices
            .iter()
            .zip(&state.holdings)
            .map(|(p, &w)| p * w as f64)
            .sum::<f64>()
}

/// `Pᵀ·|executed|·cost_percentage`.
pub fn transaction_cost(prices: &[f64], executed: &[i64], cost_percentage: f64) -> f64 {
    prices
        .iter()
        .zip(executed)
        .map(|(p, &e)| p * e.unsigned_abs() as f64)
        .sum::<f64>()
        * cost_percentage
}

/// Cash after settling `executed` at `prices`, cost included.
fn settle_balance(balance: f64, prices: &[f64], executed: &[i64], cost_percentage: f64) -> f64 {
    let traded: f64 = prices.iter().zip(executed).map(|(p, &e)| p * e as f64).sum();
    balance - traded - transaction_cost(prices, executed, cost_percentage)
}

/// Makes an order feasible: entries are bounded by `hmax`, sells by current
/// holdings, and buys are filled greedily in ticker order while cash (after
/// sells settle and costs are paid) stays non-negative.
pub fn clip_action(state: &EnvState, action: &Action, config: &EnvConfig) -> Action {
    let pct = config.cost_percentage;
    let mut shares: Vec<i64> = action
        .shares
        .iter()
        .zip(&state.holdings)
        .map(|(&s, &w)| s.clamp(-config.hmax, config.hmax).max(-w))
        .collect();
    let sells: Vec<i64> = shares.iter().map(|&s| s.min(0)).collect();
    let mut cash = settle_balance(state.balance, &state.prices, &sells, pct);
    for (i, s) in shares.iter_mut().enumerate() {
        if *s <= 0 {
            continue;
        }
        let unit = state.prices[i] * (1.0 + pct);
        let affordable = (cash / unit).floor().max(0.0) as i64;
        *s = (*s).min(affordable);
        cash -= *s as f64 * unit;
    }
    // Settle with the exact step arithmetic and trim rounding overshoot.
    while settle_balance(state.balance, &state.prices, &shares, pct) < 0.0 {
        match shares.iter().rposition(|&s| s > 0) {
            Some(i) => shares[i] -= 1,
            None => break,
        }
    }
    Action { shares }
}

/// Forces `+hmax` where the score exceeds `rs_buy` and `-hmax` where it falls
/// below `rs_sell`; other stocks keep the policy's order.
pub fn apply_rsrs_override(action: &Action, rightdev: &[Option<f64>], config: &EnvConfig) -> Action {
    if !config.override_enabled {
        return action.clone();
    }
    let shares = action
        .shares
        .iter()
        .zip(rightdev)
        .map(|(&s, r)| match r {
            Some(x) if *x > config.rs_buy => config.hmax,
            Some(x) if *x < config.rs_sell => -config.hmax,
            _ => s,
        })
        .collect();
    Action { shares }
}

pub fn cumulative_reward(rewards: &[f64]) -> f64 {
    rewards.iter().sum()
}

/// Affine normalisation of states into network inputs.
///
/// Layout: `[balance/B0, prices/P0 (D), holdings/hmax (D), indicators (8D)]`
/// where each stock's indicators are
/// `[macd/P0, sma30/P0, sma60/P0, boll_width/P0, rsi/100, cci/100, adx/100, rightdev]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEncoder {
    pub initial_balance: f64,
    pub reference_prices: Vec<f64>,
    pub hmax: i64,
}

impl ObservationEncoder {
    pub fn dim(&self) -> usize {
        observation_dim(self.reference_prices.len())
    }

    pub fn encode(&self, state: &EnvState) -> Vec<f64> {
        let d = state.num_stocks();
        let mut out = Vec::with_capacity(self.dim());
        out.push(state.balance / self.initial_balance);
        out.extend(state.prices.iter().zip(&self.reference_prices).map(|(p, p0)| p / p0));
        out.extend(state.holdings.iter().map(|&w| w as f64 / self.hmax as f64));
        for i in 0..d {
            let block = &state.indicators[i * FEATURES_PER_STOCK..(i + 1) * FEATURES_PER_STOCK];
            let p0 = self.reference_prices[i];
            let scale = [p0, p0, p0, p0, 100.0, 100.0, 100.0, 1.0];
            out.extend(block.iter().zip(scale).map(|(v, s)| v / s));
        }
        out
    }

    /// Inverse of the balance/price/holdings part of [`encode`](Self::encode).
    pub fn decode_account(&self, obs: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.reference_prices.len();
        let balance = obs[0] * self.initial_balance;
        let prices = obs[1..1 + d]
            .iter()
            .zip(&self.reference_prices)
            .map(|(x, p0)| x * p0)
            .collect();
        let holdings = obs[1 + d..1 + 2 * d]
            .iter()
            .map(|x| x * self.hmax as f64)
            .collect();
        (balance, prices, holdings)
    }
}

pub fn observation_dim(d: usize) -> usize {
    1 + 2 * d + FEATURES_PER_STOCK * d
}

/// Index of the balance coordinate in an observation.
pub const BALANCE_COORD: usize = 0;

/// Range of the holdings coordinates in an observation for `d` stocks.
pub fn holdings_coords(d: usize) -> std::ops::Range<usize> {
    1 + d..1 + 2 * d
}

pub fn encode_observation(state: &EnvState, encoder: &ObservationEncoder) -> Vec<f64> {
    encoder.encode(state)
}

/// One environment instance walking a slice of the calendar.
#[derive(Debug, Clone)]
pub struct TradingEnv {
    slice: EnvSlice,
    config: EnvConfig,
    encoder: ObservationEncoder,
    state: EnvState,
    done: bool,
}

impl TradingEnv {
    pub fn new(slice: EnvSlice, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        if slice.len() < 2 {
            return Err(EnvError::SliceTooShort(slice.len()));
        }
        let encoder = ObservationEncoder {
            initial_balance: config.initial_balance,
            reference_prices: slice.prices(0).to_vec(),
            hmax: config.hmax,
        };
        let state = initial_state(&slice, &config);
        Ok(Self {
            slice,
            config,
            encoder,
            state,
            done: false,
        })
    }

    pub fn reset(&mut self) -> &EnvState {
        self.state = initial_state(&self.slice, &self.config);
        self.done = false;
        &self.state
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn slice(&self) -> &EnvSlice {
        &self.slice
    }

    pub fn encoder(&self) -> &ObservationEncoder {
        &self.encoder
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn num_stocks(&self) -> usize {
        self.slice.num_stocks()
    }

    pub fn observation(&self) -> Vec<f64> {
        self.encoder.encode(&self.state)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let d = self.num_stocks();
        if action.shares.len() != d {
            return Err(EnvError::ActionShape {
                expected: d,
                got: action.shares.len(),
            });
        }
        let result = transition(&self.slice, &self.state, action, &self.config);
        self.state = result.next_state.clone();
        self.done = result.done;
        Ok(result)
    }
}

fn initial_state(slice: &EnvSlice, config: &EnvConfig) -> EnvState {
    let d = slice.num_stocks();
    EnvState {
        balance: config.initial_balance,
        prices: slice.prices(0).to_vec(),
        holdings: vec![0; d],
        indicators: slice.indicators(0).to_vec(),
        rightdev: slice.rightdev(0).to_vec(),
        day_index: 0,
    }
}

/// Pure transition from `state` under `action`.
pub fn transition(slice: &EnvSlice, state: &EnvState, action: &Action, config: &EnvConfig) -> StepResult {
    let executed = clip_action(state, action, config);
    let pct = config.cost_percentage;
    let cost = transaction_cost(&state.prices, &executed.shares, pct);
    let balance = settle_balance(state.balance, &state.prices, &executed.shares, pct);
    let holdings: Vec<i64> = state
        .holdings
        .iter()
        .zip(&executed.shares)
        .map(|(w, e)| w + e)
        .collect();
    let day = state.day_index + 1;
    let next_state = EnvState {
        balance,
        prices: slice.prices(day).to_vec(),
        holdings,
        indicators: slice.indicators(day).to_vec(),
        rightdev: slice.rightdev(day).to_vec(),
        day_index: day,
    };
    let before = asset_value(state);
    let after = asset_value(&next_state);
    let mut change = after - before;
    if config.double_cost_in_reward {
        change -= cost;
    }
    let scale = if config.percent_reward { 100.0 } else { 1.0 };
    StepResult {
        reward: change / before * scale,
        done: day + 1 == slice.len(),
        executed,
        cost,
        next_state,
    }
}

/// One row of an episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub date: chrono::NaiveDate,
    pub balance: f64,
    pub asset: f64,
    pub reward: f64,
    pub cost: f64,
    pub executed: Vec<i64>,
}

/// Writes `day,balance,asset,reward,cost,<ticker>...` (executed shares per stock).
pub fn write_trace(path: &Path, tickers: &[String], rows: &[TraceRow]) -> Result<(), EnvError> {
    let mut out = String::from("day,balance,asset,reward,cost");
    for t in tickers {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.date, r.balance, r.asset, r.reward, r.cost
        ));
        for e in &r.executed {
            out.push_str(&format!(",{e}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests;
