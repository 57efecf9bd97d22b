use std::sync::Arc;

use super::*;
use crate::indicators::RsrsParams;
use crate::market_data::synthetic_universe;

fn slice(d: usize, t: usize, vol: f64) -> EnvSlice {
    let u = synthetic_universe(5, d, t, 0.0, vol).unwrap();
    let f = MarketFeatures::build(&u, RsrsParams { l: 10, m: 20 }).unwrap();
    EnvSlice::full(Arc::new(f)).unwrap()
}

fn state(balance: f64, prices: Vec<f64>, holdings: Vec<i64>) -> EnvState {
    let d = prices.len();
    EnvState {
        balance,
        prices,
        holdings,
        indicators: vec![0.0; d * FEATURES_PER_STOCK],
        rightdev: vec![None; d],
        day_index: 0,
    }
}

#[test]
fn reset_gives_empty_portfolio() {
    let mut env = TradingEnv::new(slice(30, 80, 0.01), EnvConfig::default()).unwrap();
    let s = env.reset().clone();
    assert_eq!(asset_value(&s), 1e6);
    assert_eq!(s.holdings, vec![0; 30]);
    assert_eq!(env.reset(), &s);
}

#[test]
fn short_slice_is_rejected() {
    let u = synthetic_universe(5, 1, 80, 0.0, 0.01).unwrap();
    let f = Arc::new(MarketFeatures::build(&u, RsrsParams::default()).unwrap());
    assert!(matches!(
        EnvSlice::new(f, 3..4),
        Err(EnvError::SliceTooShort(1))
    ));
}

#[test]
fn asset_value_examples() {
    assert_eq!(asset_value(&state(1e6, vec![10.0], vec![0])), 1e6);
    assert_eq!(asset_value(&state(0.0, vec![10.0, 20.0], vec![100, 50])), 2000.0);
}

#[test]
fn transaction_cost_examples() {
    assert!((transaction_cost(&[10.0], &[-100], 0.001) - 1.0).abs() < 1e-12);
    assert_eq!(transaction_cost(&[10.0, 3.0], &[0, 0], 0.5), 0.0);
    assert!((transaction_cost(&[10.0, 20.0], &[50, -30], 0.002) - 2.2).abs() < 1e-12);
}

#[test]
fn clip_bounds_sells_by_holdings_and_buys_by_cash() {
    let cfg = EnvConfig {
        cost_percentage: 0.0,
        ..EnvConfig::default()
    };
    let s = state(0.0, vec![10.0], vec![40]);
    assert_eq!(clip_action(&s, &Action { shares: vec![-100] }, &cfg).shares, vec![-40]);
    let s = state(500.0, vec![10.0], vec![0]);
    assert_eq!(clip_action(&s, &Action { shares: vec![100] }, &cfg).shares, vec![50]);
}

#[test]
fn clip_funds_buys_from_same_step_sells_in_ticker_order() {
    let cfg = EnvConfig {
        cost_percentage: 0.0,
        ..EnvConfig::default()
    };
    // Selling 10 of stock 2 frees 200; stock 0 is filled first.
    let s = state(100.0, vec![10.0, 10.0, 20.0], vec![0, 0, 10]);
    let a = Action { shares: vec![25, 25, -10] };
    assert_eq!(clip_action(&s, &a, &cfg).shares, vec![25, 5, -10]);
}

#[test]
fn clip_never_reverses_intent() {
    let cfg = EnvConfig::default();
    let s = state(0.0, vec![10.0, 10.0], vec![0, 0]);
    let out = clip_action(&s, &Action { shares: vec![100, -100] }, &cfg);
    assert_eq!(out.shares, vec![0, 0]);
}

#[test]
fn override_rules() {
    let cfg = EnvConfig {
        override_enabled: true,
        ..EnvConfig::default()
    };
    let a = Action { shares: vec![-20] };
    assert_eq!(apply_rsrs_override(&a, &[Some(1.5)], &cfg).shares, vec![100]);
    assert_eq!(apply_rsrs_override(&a, &[Some(0.0)], &cfg).shares, vec![-20]);
    assert_eq!(apply_rsrs_override(&a, &[None], &cfg).shares, vec![-20]);
    let b = Action { shares: vec![100] };
    assert_eq!(apply_rsrs_override(&b, &[Some(-0.5)], &cfg).shares, vec![-100]);
    let off = EnvConfig::default();
    assert_eq!(apply_rsrs_override(&a, &[Some(1.5)], &off).shares, vec![-20]);
}

#[test]
fn null_step_on_flat_prices() {
    let mut env = TradingEnv::new(slice(2, 80, 0.0), EnvConfig::default()).unwrap();
    let before = env.state().clone();
    let r = env.step(&Action::hold(2)).unwrap();
    assert_eq!(r.reward, 0.0);
    assert_eq!(r.cost, 0.0);
    assert_eq!(r.next_state.balance, before.balance);
    assert_eq!(r.next_state.holdings, before.holdings);
    assert_eq!(r.next_state.prices, before.prices);
    assert_eq!(r.next_state.day_index, 1);
}

#[test]
fn zero_cost_buy_conserves_assets_on_flat_prices() {
    let cfg = EnvConfig {
        cost_percentage: 0.0,
        ..EnvConfig::default()
    };
    let mut env = TradingEnv::new(slice(1, 80, 0.0), cfg).unwrap();
    let r = env.step(&Action { shares: vec![50] }).unwrap();
    assert_eq!(r.executed.shares, vec![50]);
    assert_eq!(r.reward, 0.0);
    assert_eq!(asset_value(&r.next_state), 1e6);
}

#[test]
fn hand_accounting_replay() {
    // D = 1, B = 1000, P = 10 -> 11, buy 50 at 0.1 % cost.
    let u = synthetic_universe(1, 1, 80, 0.1, 0.0).unwrap();
    let f = Arc::new(MarketFeatures::build(&u, RsrsParams { l: 10, m: 20 }).unwrap());
    let slice = EnvSlice::new(f, 0..2).unwrap();
    let p0 = slice.prices(0)[0];
    let p1 = slice.prices(1)[0];
    assert!((p1 / p0 - 1.1).abs() < 1e-12);
    let scale = 10.0 / p0;
    // Rebase the example to the fixture's price level: B scales with P.
    let cfg = EnvConfig {
        initial_balance: 1000.0 / scale,
        ..EnvConfig::default()
    };
    let mut env = TradingEnv::new(slice, cfg).unwrap();
    let r = env.step(&Action { shares: vec![50] }).unwrap();
    assert!((r.cost * scale - 0.5).abs() < 1e-9);
    assert!((r.next_state.balance * scale - 499.5).abs() < 1e-9);
    assert!((asset_value(&r.next_state) * scale - 1049.5).abs() < 1e-9);
    assert!((r.reward - 4.95).abs() < 1e-9);
    assert!(r.done);
    assert!(matches!(env.step(&Action::hold(1)), Err(EnvError::EpisodeDone)));
}

#[test]
fn double_cost_variant_subtracts_cost_again() {
    let cfg = EnvConfig {
        double_cost_in_reward: true,
        ..EnvConfig::default()
    };
    let mut env = TradingEnv::new(slice(1, 80, 0.0), cfg).unwrap();
    let r = env.step(&Action { shares: vec![100] }).unwrap();
    let single = -r.cost / 1e6 * 100.0;
    assert!((r.reward - 2.0 * single).abs() < 1e-12);
}

#[test]
fn observation_layout() {
    let env = TradingEnv::new(slice(30, 80, 0.01), EnvConfig::default()).unwrap();
    let obs = env.observation();
    assert_eq!(obs.len(), 301);
    assert_eq!(obs[BALANCE_COORD], 1.0);
    assert!(obs[holdings_coords(30)].iter().all(|&h| h == 0.0));
    assert!(obs[1..31].iter().all(|&p| p == 1.0));
}

#[test]
fn action_scaling_rounds_toward_zero() {
    let a = Action::from_normalized(&[0.999, -0.999, 0.004, 1.5], 100);
    assert_eq!(a.shares, vec![99, -99, 0, 100]);
    assert!(Action::new(vec![101], 100).is_err());
}

#[test]
fn cumulative_reward_examples() {
    assert_eq!(cumulative_reward(&[]), 0.0);
    assert_eq!(cumulative_reward(&[1.0, -2.0, 3.0]), 2.0);
}

#[test]
fn config_validation() {
    assert!(EnvConfig::default().validate().is_ok());
    let bad = [
        EnvConfig { hmax: 0, ..EnvConfig::default() },
        EnvConfig { cost_percentage: 1.0, ..EnvConfig::default() },
        EnvConfig { rs_buy: -1.0, ..EnvConfig::default() },
        EnvConfig { initial_balance: 0.0, ..EnvConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err());
    }
}
