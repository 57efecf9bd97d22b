//! Soft actor-critic with twin critics, target networks and a fixed entropy
//! weight.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::checkpoint::Bundle;
use crate::dynamics::Transition;
use crate::nn::{
    polyak_update, squashed_gaussian_sample, squashed_sample_grads, Activation, Adam, AdamConfig,
    GaussianHead, Mlp,
};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            alpha: 0.2,
            lr_q: 3e-4,
            lr_pi: 3e-4,
            hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} must lie in (0, 1)", self.gamma));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} must lie in [0, 1]", self.tau));
        }
        if !(self.lr_q >= 0.0 && self.lr_pi >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}

/// Losses measured before the update they drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    /// Mean of the two critics' mean squared TD errors.
    pub q_loss: f64,
    pub pi_loss: f64,
    pub entropy: f64,
}

/// Mean of `−log π` over a batch.
pub fn entropy(log_probs: &[f64]) -> Result<f64, AgentError> {
    if log_probs.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    Ok(-log_probs.iter().sum::<f64>() / log_probs.len() as f64)
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn standard_normals(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    config: SacConfig,
    obs_dim: usize,
    action_dim: usize,
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    opt_pi: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    head: GaussianHead,
}

impl SacAgent {
    pub fn new(obs_dim: usize, action_dim: usize, config: SacConfig, rng: &mut Rng) -> Result<Self, AgentError> {
        config.validate()?;
        let mut pi_sizes = vec![obs_dim];
        pi_sizes.extend(&config.hidden);
        pi_sizes.push(2 * action_dim);
        let mut q_sizes = vec![obs_dim + action_dim];
        q_sizes.extend(&config.hidden);
        q_sizes.push(1);
        let policy = Mlp::new(&pi_sizes, config.activation, rng);
        let q1 = Mlp::new(&q_sizes, config.activation, rng);
        let q2 = Mlp::new(&q_sizes, config.activation, rng);
        Ok(Self::from_networks(config, policy, q1.clone(), q2.clone(), q1, q2))
    }

    /// Assembles an agent around existing networks (fresh optimiser state).
    pub fn from_networks(
        config: SacConfig,
        policy: Mlp,
        q1: Mlp,
        q2: Mlp,
        q1_target: Mlp,
        q2_target: Mlp,
    ) -> Self {
        let obs_dim = policy.input_dim();
        let action_dim = policy.output_dim() / 2;
        Self {
            opt_pi: Adam::new(AdamConfig::with_lr(config.lr_pi), policy.num_params()),
            opt_q1: Adam::new(AdamConfig::with_lr(config.lr_q), q1.num_params()),
            opt_q2: Adam::new(AdamConfig::with_lr(config.lr_q), q2.num_params()),
            config,
            obs_dim,
            action_dim,
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            head: GaussianHead::policy(),
        }
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn distribution(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        let raw = self.policy.forward(obs)?;
        Ok(self.head.split(&raw))
    }

    /// Squashed policy action in `(-1, 1)`; `tanh(μ)` when deterministic.
    pub fn select_action(&self, obs: &[f64], deterministic: bool, rng: &mut Rng) -> Result<Vec<f64>, AgentError> {
        let (mean, log_std) = self.distribution(obs)?;
        if deterministic {
            return Ok(mean.iter().map(|m| m.tanh()).collect());
        }
        let noise = standard_normals(self.action_dim, rng);
        Ok(squashed_gaussian_sample(&mean, &log_std, &noise).action)
    }

    fn q_value(net: &Mlp, obs: &[f64], action: &[f64]) -> Result<f64, AgentError> {
        Ok(net.forward(&concat(obs, action))?[0])
    }

    /// Clipped double-Q soft targets
    /// `y = r + γ(1 − d)(min_j Q_targ,j(s', ã') − α log π(ã'|s'))` with
    /// `ã' = tanh(μ(s') + σ(s')·noise)`.
    pub fn q_targets_with_noise(&self, batch: &[&Transition], noise: &[Vec<f64>]) -> Result<Vec<f64>, AgentError> {
        let mut ys = Vec::with_capacity(batch.len());
        for (t, z) in batch.iter().zip(noise) {
            if t.done {
                ys.push(t.reward);
                continue;
            }
            let (mean, log_std) = self.distribution(&t.next_obs)?;
            let s = squashed_gaussian_sample(&mean, &log_std, z);
            let q1 = Self::q_value(&self.q1_target, &t.next_obs, &s.action)?;
            let q2 = Self::q_value(&self.q2_target, &t.next_obs, &s.action)?;
            let soft = q1.min(q2) - self.config.alpha * s.log_prob;
            ys.push(t.reward + self.config.gamma * soft);
        }
        Ok(ys)
    }

    pub fn q_targets(&self, batch: &[&Transition], rng: &mut Rng) -> Result<Vec<f64>, AgentError> {
        let noise: Vec<Vec<f64>> = batch.iter().map(|_| standard_normals(self.action_dim, rng)).collect();
        self.q_targets_with_noise(batch, &noise)
    }

    /// Mean squared error of one critic against fixed targets, with its
    /// parameter gradient.
    pub fn critic_loss_grad(net: &Mlp, batch: &[&Transition], targets: &[f64]) -> Result<(f64, Vec<f64>), AgentError> {
        let mut grads = vec![0.0; net.num_params()];
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (t, y) in batch.iter().zip(targets) {
            let (q, tape) = net.forward_tape(&concat(&t.obs, &t.action))?;
            let err = q[0] - y;
            loss += err * err / n;
            net.backward(&tape, &[2.0 * err / n], &mut grads)?;
        }
        Ok((loss, grads))
    }

    /// `E[α log π(ã|s) − min_j Q_j(s, ã)]` with reparameterised `ã`, and its
    /// gradient with respect to the policy parameters.
    pub fn policy_loss_grad(&self, obs_batch: &[&[f64]], noise: &[Vec<f64>]) -> Result<(f64, Vec<f64>, f64), AgentError> {
        let n = obs_batch.len() as f64;
        let alpha = self.config.alpha;
        let mut grads = vec![0.0; self.policy.num_params()];
        let mut loss = 0.0;
        let mut entropy_sum = 0.0;
        for (obs, z) in obs_batch.iter().zip(noise) {
            let (raw, tape) = self.policy.forward_tape(obs)?;
            let (mean, log_std) = self.head.split(&raw);
            let s = squashed_gaussian_sample(&mean, &log_std, z);
            let x = concat(obs, &s.action);
            let (q1, t1) = self.q1.forward_tape(&x)?;
            let (q2, t2) = self.q2.forward_tape(&x)?;
            let (q, net, tape_q) = if q1[0] <= q2[0] {
                (q1[0], &self.q1, t1)
            } else {
                (q2[0], &self.q2, t2)
            };
            loss += (alpha * s.log_prob - q) / n;
            entropy_sum -= s.log_prob;
            let mut scratch = vec![0.0; net.num_params()];
            let dq_dx = net.backward(&tape_q, &[1.0], &mut scratch)?;
            let d_action: Vec<f64> = dq_dx[self.obs_dim..].iter().map(|g| -g / n).collect();
            let (d_mean, d_log_std) = squashed_sample_grads(&s, &log_std, z, &d_action, alpha / n);
            let up = self.head.backprop(&raw, &d_mean, &d_log_std);
            self.policy.backward(&tape, &up, &mut grads)?;
        }
        Ok((loss, grads, entropy_sum / n))
    }

    /// One critic step, one policy step and a Polyak update of the targets.
    pub fn update(&mut self, batch: &[&Transition], rng: &mut Rng) -> Result<SacLosses, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBatch);
        }
        let targets = self.q_targets(batch, rng)?;
        let (l1, g1) = Self::critic_loss_grad(&self.q1, batch, &targets)?;
        let (l2, g2) = Self::critic_loss_grad(&self.q2, batch, &targets)?;
        let q_loss = 0.5 * (l1 + l2);
        if !q_loss.is_finite() {
            return Err(AgentError::NonFinite {
                what: "critic loss".into(),
                detail: format!("q1 loss {l1}, q2 loss {l2}"),
            });
        }
        self.opt_q1.step("critic 1", self.q1.params_mut(), &g1)?;
        self.opt_q2.step("critic 2", self.q2.params_mut(), &g2)?;

        let obs: Vec<&[f64]> = batch.iter().map(|t| t.obs.as_slice()).collect();
        let noise: Vec<Vec<f64>> = batch.iter().map(|_| standard_normals(self.action_dim, rng)).collect();
        let (pi_loss, gp, entropy) = self.policy_loss_grad(&obs, &noise)?;
        if !pi_loss.is_finite() {
            return Err(AgentError::NonFinite {
                what: "policy loss".into(),
                detail: format!("pi loss {pi_loss}, entropy {entropy}"),
            });
        }
        self.opt_pi.step("policy", self.policy.params_mut(), &gp)?;

        polyak_update(&mut self.q1_target, &self.q1, self.config.tau);
        polyak_update(&mut self.q2_target, &self.q2, self.config.tau);
        Ok(SacLosses {
            q_loss,
            pi_loss,
            entropy,
        })
    }

    pub fn write_bundle(&self, bundle: &mut Bundle, prefix: &str) {
        let cfg = serde_json::to_string(&self.config).expect("config serialises");
        bundle.put_text(format!("{prefix}sac_config"), cfg);
        bundle.put_mlp(format!("{prefix}policy"), &self.policy);
        bundle.put_mlp(format!("{prefix}q1"), &self.q1);
        bundle.put_mlp(format!("{prefix}q2"), &self.q2);
        bundle.put_mlp(format!("{prefix}q1_target"), &self.q1_target);
        bundle.put_mlp(format!("{prefix}q2_target"), &self.q2_target);
    }

    pub fn read_bundle(bundle: &Bundle, prefix: &str) -> Result<Self, AgentError> {
        let config: SacConfig = serde_json::from_str(bundle.text(&format!("{prefix}sac_config"))?)
            .map_err(|e| AgentError::InvalidConfig(format!("checkpoint config: {e}")))?;
        config.validate()?;
        let net = |n: &str| bundle.mlp(&format!("{prefix}{n}")).cloned();
        Ok(Self::from_networks(
            config,
            net("policy")?,
            net("q1")?,
            net("q2")?,
            net("q1_target")?,
            net("q2_target")?,
        ))
    }
}
