//! Embedded oracle checks: each compares a production routine with an
//! independent reference computation on seeded random inputs.

use std::sync::Arc;

use rand::Rng as _;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::agents::{SacAgent, SacConfig};
use crate::backtest::{annualized_return, calmar, max_drawdown};
use crate::dynamics::Transition;
use crate::env::{asset_value, Action, EnvConfig, EnvSlice, MarketFeatures, TradingEnv};
use crate::indicators::{ols_fit, rsrs_from_prices, RsrsParams};
use crate::market_data::synthetic_universe;
use crate::nn::{gaussian_nll, gaussian_nll_grad, Activation, Mlp};
use crate::rng::Rng;

/// Outcome of one oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    /// Largest discrepancy observed (`NaN` when the check could not run).
    pub error: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &'static str, tolerance: f64, error: f64) -> Self {
        Self {
            name,
            tolerance,
            error,
            passed: error <= tolerance,
        }
    }
}

type Check = (&'static str, f64, fn(&mut Rng) -> f64);

const CHECKS: [Check; 9] = [
    ("ols closed form", 1e-9, ols_closed_form),
    ("rsrs two-pass moments", 1e-9, rsrs_two_pass),
    ("max drawdown brute force", 1e-12, drawdown_brute_force),
    ("calmar identity", 1e-10, calmar_identity),
    ("mlp gradient", 1e-4, mlp_gradient),
    ("gaussian nll gradient", 1e-4, nll_gradient),
    ("critic loss gradient", 1e-4, critic_gradient),
    ("policy objective gradient", 1e-4, policy_gradient),
    ("accounting replay", 1e-9, accounting_replay),
];

/// Runs every oracle with a fixed seed.
pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, (name, tol, f))| {
            let mut rng = Rng::seed_from_u64(0x5e1f_7e57 + i as u64);
            CheckResult::new(name, *tol, f(&mut rng))
        })
        .collect()
}

/// Fixed-width table of the results.
pub fn render(results: &[CheckResult]) -> String {
    let mut out = format!("{:<28} {:>10} {:>12}  result\n", "check", "tolerance", "error");
    for r in results {
        out.push_str(&format!(
            "{:<28} {:>10.0e} {:>12.3e}  {}\n",
            r.name,
            r.tolerance,
            r.error,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    out
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (norm(a) + norm(b)).max(1e-12)
}

/// Central differences of `f` at `x` with step `h`.
pub fn finite_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn two_pass_ols(y: &[f64], x: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let beta = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    (my - beta * mx, beta, r2)
}

fn ols_closed_form(rng: &mut Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| 100.0 + 5.0 * normal(rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 0.9 * v + normal(rng)).collect();
        let Ok(fit) = ols_fit(&y, &x) else {
            return f64::NAN;
        };
        let (a, b, r2) = two_pass_ols(&y, &x);
        worst = worst
            .max((fit.alpha - a).abs() / a.abs().max(1.0))
            .max((fit.beta - b).abs())
            .max((fit.r2 - r2).abs());
    }
    worst
}

fn rsrs_two_pass(rng: &mut Rng) -> f64 {
    let (l, m, n) = (10, 60, 200);
    let mut close = 100.0;
    let (mut high, mut low) = (Vec::new(), Vec::new());
    for _ in 0..n {
        close *= (0.01 * normal(rng)).exp();
        high.push(close * (1.0 + 0.01 * rng.random::<f64>()));
        low.push(close * (1.0 - 0.01 * rng.random::<f64>()));
    }
    let Ok(s) = rsrs_from_prices(&high, &low, RsrsParams { l, m }) else {
        return f64::NAN;
    };
    let betas: Vec<(f64, f64)> = (l - 1..n)
        .map(|t| {
            let (_, b, r2) = two_pass_ols(&high[t + 1 - l..=t], &low[t + 1 - l..=t]);
            (b, r2)
        })
        .collect();
    let mut worst = 0.0f64;
    for (k, t) in (l - 1..n).enumerate() {
        if k + 1 < m {
            if s.rightdev[t].is_some() {
                return f64::INFINITY;
            }
            continue;
        }
        let window: Vec<f64> = betas[k + 1 - m..=k].iter().map(|p| p.0).collect();
        let mean = window.iter().sum::<f64>() / m as f64;
        let sd = (window.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / m as f64).sqrt();
        let (b, r2) = betas[k];
        let z = (b - mean) / sd;
        let Some(rd) = s.rightdev[t] else {
            return f64::INFINITY;
        };
        worst = worst
            .max((s.beta[t].unwrap_or(f64::NAN) - b).abs())
            .max((s.std[t].unwrap_or(f64::NAN) - z).abs())
            .max((rd - z * r2 * b).abs());
    }
    worst
}

fn random_curve(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut v = 100.0;
    (0..n)
        .map(|_| {
            v *= (0.03 * normal(rng)).exp();
            v
        })
        .collect()
}

fn drawdown_brute_force(rng: &mut Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..80);
        let c = random_curve(rng, n);
        let mut oracle = 0.0f64;
        for j in 0..c.len() {
            for i in 0..=j {
                oracle = oracle.min(c[j] / c[i] - 1.0);
            }
        }
        match max_drawdown(&c) {
            Ok(m) => worst = worst.max((m - oracle).abs()),
            Err(_) => return f64::NAN,
        }
    }
    worst
}

fn calmar_identity(rng: &mut Rng) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let c = random_curve(rng, 60);
        let (Ok(ca), Ok(m), Ok(ar)) = (calmar(&c), max_drawdown(&c), annualized_return(&c)) else {
            continue;
        };
        worst = worst.max((ca * m.abs() - ar).abs() / ar.abs().max(1.0));
    }
    worst
}

fn mlp_gradient(rng: &mut Rng) -> f64 {
    let mut net = Mlp::new(&[4, 32, 32, 2], Activation::Tanh, rng);
    let x: Vec<f64> = (0..4).map(|_| normal(rng)).collect();
    let w: Vec<f64> = (0..2).map(|_| normal(rng)).collect();
    let objective = |n: &Mlp| -> f64 {
        let y = n.forward(&x).expect("width matches");
        y.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let Ok((_, tape)) = net.forward_tape(&x) else {
        return f64::NAN;
    };
    let mut grads = vec![0.0; net.num_params()];
    if net.backward(&tape, &w, &mut grads).is_err() {
        return f64::NAN;
    }
    let params = net.params().to_vec();
    let fd = finite_difference(&params, 1e-5, |p| {
        net.params_mut().copy_from_slice(p);
        objective(&net)
    });
    relative_error(&grads, &fd)
}

fn nll_gradient(rng: &mut Rng) -> f64 {
    let k = 6;
    let mu: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
    let ls: Vec<f64> = (0..k).map(|_| 0.5 * normal(rng)).collect();
    let t: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
    let (_, dmu, dls) = gaussian_nll_grad(&mu, &ls, &t);
    let joint: Vec<f64> = mu.iter().chain(&ls).copied().collect();
    let fd = finite_difference(&joint, 1e-6, |p| gaussian_nll(&p[..k], &p[k..], &t));
    let analytic: Vec<f64> = dmu.into_iter().chain(dls).collect();
    relative_error(&analytic, &fd)
}

fn toy_agent(rng: &mut Rng, obs_dim: usize, act_dim: usize) -> SacAgent {
    let cfg = SacConfig {
        hidden: vec![32, 32],
        activation: Activation::Tanh,
        ..SacConfig::default()
    };
    SacAgent::new(obs_dim, act_dim, cfg, rng).expect("valid config")
}

fn toy_batch(rng: &mut Rng, n: usize, obs_dim: usize, act_dim: usize) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            obs: (0..obs_dim).map(|_| normal(rng)).collect(),
            action: (0..act_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            next_obs: (0..obs_dim).map(|_| normal(rng)).collect(),
            reward: normal(rng),
            done: false,
        })
        .collect()
}

fn critic_gradient(rng: &mut Rng) -> f64 {
    let agent = toy_agent(rng, 3, 2);
    let batch = toy_batch(rng, 8, 3, 2);
    let refs: Vec<&Transition> = batch.iter().collect();
    let Ok(targets) = agent.q_targets(&refs, rng) else {
        return f64::NAN;
    };
    let Ok((_, grads)) = SacAgent::critic_loss_grad(&agent.q1, &refs, &targets) else {
        return f64::NAN;
    };
    let mut net = agent.q1.clone();
    let params = net.params().to_vec();
    let fd = finite_difference(&params, 1e-5, |p| {
        net.params_mut().copy_from_slice(p);
        SacAgent::critic_loss_grad(&net, &refs, &targets).map_or(f64::NAN, |r| r.0)
    });
    relative_error(&grads, &fd)
}

fn policy_gradient(rng: &mut Rng) -> f64 {
    let mut agent = toy_agent(rng, 3, 2);
    let obs: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| normal(rng)).collect()).collect();
    let noise: Vec<Vec<f64>> = (0..8).map(|_| (0..2).map(|_| normal(rng)).collect()).collect();
    let refs: Vec<&[f64]> = obs.iter().map(Vec::as_slice).collect();
    let Ok((_, grads, _)) = agent.policy_loss_grad(&refs, &noise) else {
        return f64::NAN;
    };
    let params = agent.policy.params().to_vec();
    let fd = finite_difference(&params, 1e-5, |p| {
        agent.policy.params_mut().copy_from_slice(p);
        agent.policy_loss_grad(&refs, &noise).map_or(f64::NAN, |r| r.0)
    });
    relative_error(&grads, &fd)
}

fn accounting_replay(rng: &mut Rng) -> f64 {
    let Ok(u) = synthetic_universe(rng.random(), 3, 80, 0.0005, 0.02) else {
        return f64::NAN;
    };
    let Ok(features) = MarketFeatures::build(&u, RsrsParams { l: 5, m: 10 }) else {
        return f64::NAN;
    };
    let Ok(slice) = EnvSlice::full(Arc::new(features)) else {
        return f64::NAN;
    };
    let cfg = EnvConfig {
        initial_balance: 2e4,
        ..EnvConfig::default()
    };
    let Ok(mut env) = TradingEnv::new(slice, cfg.clone()) else {
        return f64::NAN;
    };
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let before = env.state().clone();
        let shares: Vec<i64> = (0..3).map(|_| rng.random_range(-cfg.hmax..=cfg.hmax)).collect();
        let Ok(r) = env.step(&Action { shares }) else {
            return f64::NAN;
        };
        let next = &r.next_state;
        let gain: f64 = next
            .prices
            .iter()
            .zip(&before.prices)
            .zip(&next.holdings)
            .map(|((p1, p0), &w)| (p1 - p0) * w as f64)
            .sum();
        let expected = asset_value(&before) - r.cost + gain;
        if next.balance < 0.0 || next.holdings.iter().any(|&w| w < 0) {
            return f64::INFINITY;
        }
        worst = worst.max((asset_value(next) - expected).abs() / expected.abs());
        if r.done {
            env.reset();
        }
    }
    worst
}
