//! Diagonal Gaussian heads, Gaussian likelihood and tanh-squashed sampling.

use serde::{Deserialize, Serialize};

pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits a raw network output `[mean (n), log_std (n)]` and bounds the
/// log standard deviation, either with a hard clamp or a smooth one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub soft: bool,
}

impl GaussianHead {
    /// Hard clamp to `[-20, 2]`.
    pub fn policy() -> Self {
        Self {
            log_std_min: -20.0,
            log_std_max: 2.0,
            soft: false,
        }
    }

    pub fn soft(log_std_min: f64, log_std_max: f64) -> Self {
        Self {
            log_std_min,
            log_std_max,
            soft: true,
        }
    }

    fn bound(&self, x: f64) -> (f64, f64) {
        if self.soft {
            let y = self.log_std_max - softplus(self.log_std_max - x);
            let d1 = sigmoid(self.log_std_max - x);
            let z = self.log_std_min + softplus(y - self.log_std_min);
            let d2 = sigmoid(y - self.log_std_min);
            (z, d1 * d2)
        } else if x < self.log_std_min {
            (self.log_std_min, 0.0)
        } else if x > self.log_std_max {
            (self.log_std_max, 0.0)
        } else {
            (x, 1.0)
        }
    }

    /// Returns `(mean, log_std)`.
    pub fn split(&self, raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = raw.len() / 2;
        let mean = raw[..n].to_vec();
        let log_std = raw[n..].iter().map(|&x| self.bound(x).0).collect();
        (mean, log_std)
    }

    /// Maps gradients on `(mean, log_std)` back to the raw output.
    pub fn backprop(&self, raw: &[f64], d_mean: &[f64], d_log_std: &[f64]) -> Vec<f64> {
        let n = raw.len() / 2;
        let mut out = Vec::with_capacity(raw.len());
        out.extend_from_slice(&d_mean[..n]);
        out.extend(raw[n..].iter().zip(d_log_std).map(|(&x, g)| g * self.bound(x).1));
        out
    }
}

/// `0.5·Σ[((target − mean)/σ)² + 2·log σ + log 2π]`.
pub fn gaussian_nll(mean: &[f64], log_std: &[f64], target: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(target)
        .map(|((m, s), t)| {
            let z = (t - m) * (-s).exp();
            0.5 * (z * z + 2.0 * s + LOG_2PI)
        })
        .sum()
}

/// Loss and its gradients with respect to `mean` and `log_std`.
pub fn gaussian_nll_grad(mean: &[f64], log_std: &[f64], target: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = mean.len();
    let mut loss = 0.0;
    let mut d_mean = Vec::with_capacity(n);
    let mut d_log_std = Vec::with_capacity(n);
    for i in 0..n {
        let inv = (-log_std[i]).exp();
        let z = (target[i] - mean[i]) * inv;
        loss += 0.5 * (z * z + 2.0 * log_std[i] + LOG_2PI);
        d_mean.push(-z * inv);
        d_log_std.push(1.0 - z * z);
    }
    (loss, d_mean, d_log_std)
}

/// A reparameterised draw `a = tanh(mean + σ·noise)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub pre_tanh: Vec<f64>,
}

/// Samples from the squashed Gaussian with the change-of-variables density
/// `log N(u; mean, σ) − Σ log(1 − tanh²u)`, using
/// `log(1 − tanh²u) = 2·(log 2 − u − softplus(−2u))` for stability.
pub fn squashed_gaussian_sample(mean: &[f64], log_std: &[f64], noise: &[f64]) -> SquashedSample {
    let n = mean.len();
    let mut action = Vec::with_capacity(n);
    let mut pre_tanh = Vec::with_capacity(n);
    let mut log_prob = 0.0;
    for i in 0..n {
        let u = mean[i] + log_std[i].exp() * noise[i];
        let a = u.tanh();
        let log_det = 2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u));
        log_prob += -0.5 * noise[i] * noise[i] - log_std[i] - 0.5 * LOG_2PI - log_det;
        action.push(a);
        pre_tanh.push(u);
    }
    SquashedSample {
        action,
        log_prob,
        pre_tanh,
    }
}

/// Gradients of `d_action·a + d_log_prob·log π` with respect to `mean` and
/// `log_std`, holding the noise fixed.
pub fn squashed_sample_grads(
    sample: &SquashedSample,
    log_std: &[f64],
    noise: &[f64],
    d_action: &[f64],
    d_log_prob: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = sample.action.len();
    let mut d_mean = Vec::with_capacity(n);
    let mut d_log_std = Vec::with_capacity(n);
    for i in 0..n {
        let a = sample.action[i];
        let du = d_action[i] * (1.0 - a * a) + d_log_prob * 2.0 * a;
        d_mean.push(du);
        d_log_std.push(du * log_std[i].exp() * noise[i] - d_log_prob);
    }
    (d_mean, d_log_std)
}
