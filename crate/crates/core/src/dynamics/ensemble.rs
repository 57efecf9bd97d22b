use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ModelError, Normalizer, ReplayBuffer, RolloutPolicy, Transition, TransitionModel};
use crate::checkpoint::Bundle;
use crate::nn::{gaussian_nll_grad, Activation, Adam, AdamConfig, GaussianHead, Mlp};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub elites: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    /// Smooth bounds on the predicted log standard deviation in normalised
    /// target units.
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            elites: 3,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr: 1e-3,
            log_std_min: -10.0,
            log_std_max: 0.5,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.members < 2 {
            return bad(format!("an ensemble needs at least 2 members, got {}", self.members));
        }
        if self.elites == 0 || self.elites > self.members {
            return bad(format!(
                "elites must lie in 1..={}, got {}",
                self.members, self.elites
            ));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.log_std_min < self.log_std_max) {
            return bad("need lr > 0 and log_std_min < log_std_max".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout_fraction: f64,
}

impl Default for ModelTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 64,
            holdout_fraction: 0.1,
        }
    }
}

/// Outcome of one [`EnsembleModel::train`] call. NLL values are per output
/// coordinate in normalised target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTrainReport {
    /// `train_nll[member][epoch]`, averaged over the epoch's minibatches.
    pub train_nll: Vec<Vec<f64>>,
    pub holdout_nll_initial: Vec<f64>,
    pub holdout_nll: Vec<f64>,
    /// Mean squared one-step error of the elite-mean prediction on the
    /// holdout set, in original units.
    pub holdout_mse: f64,
    pub elites: Vec<usize>,
    pub holdout_size: usize,
}

impl ModelTrainReport {
    /// Member-averaged training NLL per epoch.
    pub fn epoch_nll(&self) -> Vec<f64> {
        let epochs = self.train_nll.first().map_or(0, Vec::len);
        (0..epochs)
            .map(|e| {
                self.train_nll.iter().map(|m| m[e]).sum::<f64>() / self.train_nll.len() as f64
            })
            .collect()
    }

    pub fn mean_holdout_nll(&self) -> f64 {
        mean(&self.holdout_nll)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberChoice {
    Index(usize),
    RandomElite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub next_obs: Vec<f64>,
    pub reward: f64,
}

/// Ensemble of Gaussian MLPs over `(next_obs − obs, reward)`.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    config: EnsembleConfig,
    obs_dim: usize,
    action_dim: usize,
    members: Vec<Mlp>,
    optimizers: Vec<Adam>,
    input_norm: Normalizer,
    target_norm: Normalizer,
    elites: Vec<usize>,
    trained: bool,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

impl EnsembleModel {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        config: EnsembleConfig,
        rng: &mut Rng,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let in_dim = obs_dim + action_dim;
        let out_dim = obs_dim + 1;
        let mut sizes = vec![in_dim];
        sizes.extend(&config.hidden);
        sizes.push(2 * out_dim);
        let members: Vec<Mlp> = (0..config.members)
            .map(|_| Mlp::new(&sizes, config.activation, rng))
            .collect();
        let optimizers = members
            .iter()
            .map(|m| Adam::new(AdamConfig::with_lr(config.lr), m.num_params()))
            .collect();
        Ok(Self {
            elites: (0..config.elites).collect(),
            config,
            obs_dim,
            action_dim,
            members,
            optimizers,
            input_norm: Normalizer::identity(in_dim),
            target_norm: Normalizer::identity(out_dim),
            trained: false,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    pub fn elites(&self) -> &[usize] {
        &self.elites
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn input_normalizer(&self) -> &Normalizer {
        &self.input_norm
    }

    fn head(&self) -> GaussianHead {
        GaussianHead::soft(self.config.log_std_min, self.config.log_std_max)
    }

    fn out_dim(&self) -> usize {
        self.obs_dim + 1
    }

    fn check_widths(&self, obs: &[f64], action: &[f64]) -> Result<(), ModelError> {
        if obs.len() != self.obs_dim {
            return Err(ModelError::Width {
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        if action.len() != self.action_dim {
            return Err(ModelError::Width {
                expected: self.action_dim,
                got: action.len(),
            });
        }
        Ok(())
    }

    fn input(&self, obs: &[f64], action: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(obs.len() + action.len());
        x.extend_from_slice(obs);
        x.extend_from_slice(action);
        self.input_norm.normalize(&x)
    }

    /// `(mean, log_std)` of one member in normalised target units.
    fn raw_distribution(&self, member: usize, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let raw = self.members[member].forward(x)?;
        Ok(self.head().split(&raw))
    }

    /// Mean and standard deviation of `(Δobs, reward)` for one member, in
    /// original units.
    pub fn member_distribution(
        &self,
        member: usize,
        obs: &[f64],
        action: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        self.check_member(member)?;
        self.check_widths(obs, action)?;
        let (m, ls) = self.raw_distribution(member, &self.input(obs, action))?;
        let mu = self.target_norm.denormalize(&m);
        let sd = ls
            .iter()
            .zip(&self.target_norm.std)
            .map(|(l, s)| l.exp() * s)
            .collect();
        Ok((mu, sd))
    }

    fn check_member(&self, member: usize) -> Result<(), ModelError> {
        if member >= self.members.len() {
            return Err(ModelError::MemberOutOfRange {
                index: member,
                members: self.members.len(),
            });
        }
        Ok(())
    }

    fn pick(&self, choice: MemberChoice, rng: &mut Rng) -> Result<usize, ModelError> {
        match choice {
            MemberChoice::Index(i) => {
                self.check_member(i)?;
                Ok(i)
            }
            MemberChoice::RandomElite => Ok(self.elites[rng.random_range(0..self.elites.len())]),
        }
    }

    fn assemble(&self, obs: &[f64], delta: &[f64]) -> Prediction {
        let next_obs = obs.iter().zip(delta).map(|(o, d)| o + d).collect();
        Prediction {
            next_obs,
            reward: delta[self.obs_dim],
        }
    }

    /// One-step prediction. Without `noise` the member mean is returned.
    pub fn predict(
        &self,
        obs: &[f64],
        action: &[f64],
        choice: MemberChoice,
        noise: bool,
        rng: &mut Rng,
    ) -> Result<Prediction, ModelError> {
        if !self.trained {
            return Err(ModelError::Untrained);
        }
        let member = self.pick(choice, rng)?;
        let (mu, sd) = self.member_distribution(member, obs, action)?;
        let delta: Vec<f64> = if noise {
            mu.iter()
                .zip(&sd)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        } else {
            mu
        };
        Ok(self.assemble(obs, &delta))
    }

    /// Average of the elite means.
    pub fn expected_next(&self, obs: &[f64], action: &[f64]) -> Result<Prediction, ModelError> {
        if !self.trained {
            return Err(ModelError::Untrained);
        }
        let mut acc = vec![0.0; self.out_dim()];
        for &e in &self.elites {
            let (mu, _) = self.member_distribution(e, obs, action)?;
            acc.iter_mut().zip(mu).for_each(|(a, m)| *a += m);
        }
        let k = self.elites.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(self.assemble(obs, &acc))
    }

    /// Mean pairwise L2 distance between elite means plus the mean L2 norm
    /// of the elite standard deviations, both in normalised target units.
    pub fn uncertainty(&self, obs: &[f64], action: &[f64]) -> Result<f64, ModelError> {
        let (disagreement, spread) = self.uncertainty_terms(obs, action)?;
        Ok(disagreement + spread)
    }

    /// The two summands of [`uncertainty`](Self::uncertainty):
    /// `(disagreement, spread)`.
    pub fn uncertainty_terms(&self, obs: &[f64], action: &[f64]) -> Result<(f64, f64), ModelError> {
        if !self.trained {
            return Err(ModelError::Untrained);
        }
        if self.elites.len() < 2 {
            return Err(ModelError::TooFewElites(self.elites.len()));
        }
        self.check_widths(obs, action)?;
        let x = self.input(obs, action);
        let dists: Vec<(Vec<f64>, Vec<f64>)> = self
            .elites
            .iter()
            .map(|&e| self.raw_distribution(e, &x))
            .collect::<Result<_, _>>()?;
        let mut disagreement = 0.0;
        let mut pairs = 0.0;
        for i in 0..dists.len() {
            for j in i + 1..dists.len() {
                let d2: f64 = dists[i]
                    .0
                    .iter()
                    .zip(&dists[j].0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                disagreement += d2.sqrt();
                pairs += 1.0;
            }
        }
        let spread = dists
            .iter()
            .map(|(_, ls)| ls.iter().map(|l| (2.0 * l).exp()).sum::<f64>().sqrt())
            .sum::<f64>()
            / dists.len() as f64;
        Ok((disagreement / pairs, spread))
    }

    /// `k`-step imagined trajectories from each start observation, in start
    /// order. Rollouts stop early only on a predicted terminal, which this
    /// model never emits.
    pub fn rollout(
        &self,
        policy: &mut dyn RolloutPolicy,
        starts: &[Vec<f64>],
        k: usize,
        choice: MemberChoice,
        noise: bool,
        rng: &mut Rng,
    ) -> Result<Vec<Transition>, ModelError> {
        if k == 0 {
            return Err(ModelError::InvalidConfig("rollout length must be >= 1".into()));
        }
        let mut out = Vec::with_capacity(starts.len() * k);
        for start in starts {
            let mut obs = start.clone();
            for _ in 0..k {
                let action = policy.act(&obs, rng);
                let p = self.predict(&obs, &action, choice, noise, rng)?;
                out.push(Transition {
                    obs: std::mem::replace(&mut obs, p.next_obs.clone()),
                    action,
                    next_obs: p.next_obs,
                    reward: p.reward,
                    done: false,
                });
            }
        }
        Ok(out)
    }

    fn per_coord_nll(&self, member: usize, data: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for (x, y) in data {
            let (m, ls) = self.raw_distribution(member, x)?;
            total += gaussian_nll_grad(&m, &ls, y).0;
        }
        Ok(total / (data.len() * self.out_dim()) as f64)
    }

    /// Refreshes the normalisers from the buffer and fits every member on
    /// its own bootstrap resample of the non-holdout transitions.
    pub fn train(
        &mut self,
        buffer: &ReplayBuffer,
        cfg: &ModelTrainConfig,
        rng: &mut Rng,
    ) -> Result<ModelTrainReport, ModelError> {
        const NEEDED: usize = 2;
        if buffer.len() < NEEDED {
            return Err(ModelError::BufferTooSmall {
                needed: NEEDED,
                got: buffer.len(),
            });
        }
        if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.holdout_fraction) {
            return Err(ModelError::InvalidConfig(
                "need batch_size > 0 and holdout_fraction in [0, 1)".into(),
            ));
        }
        for t in buffer.iter() {
            self.check_widths(&t.obs, &t.action)?;
            if t.next_obs.len() != self.obs_dim {
                return Err(ModelError::Width {
                    expected: self.obs_dim,
                    got: t.next_obs.len(),
                });
            }
        }
        let n = buffer.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let n_hold = if cfg.holdout_fraction > 0.0 {
            ((cfg.holdout_fraction * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        let (hold_idx, train_idx) = order.split_at(n_hold);

        let raw_in: Vec<Vec<f64>> = buffer
            .iter()
            .map(|t| t.obs.iter().chain(&t.action).copied().collect())
            .collect();
        let raw_out: Vec<Vec<f64>> = buffer
            .iter()
            .map(|t| {
                let mut y: Vec<f64> = t.next_obs.iter().zip(&t.obs).map(|(a, b)| a - b).collect();
                y.push(t.reward);
                y
            })
            .collect();
        self.input_norm = Normalizer::fit(train_idx.iter().map(|&i| raw_in[i].as_slice()), raw_in[0].len());
        self.target_norm = Normalizer::fit(train_idx.iter().map(|&i| raw_out[i].as_slice()), self.out_dim());

        let items = |idx: &[usize]| -> Vec<(Vec<f64>, Vec<f64>)> {
            idx.iter()
                .map(|&i| {
                    (
                        self.input_norm.normalize(&raw_in[i]),
                        self.target_norm.normalize(&raw_out[i]),
                    )
                })
                .collect()
        };
        let train_set = items(train_idx);
        let hold_set = if n_hold > 0 { items(hold_idx) } else { train_set.clone() };

        let members = self.members.len();
        let mut holdout_nll_initial = Vec::with_capacity(members);
        for m in 0..members {
            holdout_nll_initial.push(self.per_coord_nll(m, &hold_set)?);
        }

        let head = self.head();
        let out_dim = self.out_dim();
        let mut train_nll = vec![Vec::with_capacity(cfg.epochs); members];
        for m in 0..members {
            let boot: Vec<usize> = (0..train_set.len())
                .map(|_| rng.random_range(0..train_set.len()))
                .collect();
            let mut grads = vec![0.0; self.members[m].num_params()];
            for _ in 0..cfg.epochs {
                let mut perm = boot.clone();
                perm.shuffle(rng);
                let mut epoch_loss = 0.0;
                for batch in perm.chunks(cfg.batch_size) {
                    grads.iter_mut().for_each(|g| *g = 0.0);
                    let scale = 1.0 / (batch.len() * out_dim) as f64;
                    for &i in batch {
                        let (x, y) = &train_set[i];
                        let net = &self.members[m];
                        let (raw, tape) = net.forward_tape(x)?;
                        let (mu, ls) = head.split(&raw);
                        let (loss, dmu, dls) = gaussian_nll_grad(&mu, &ls, y);
                        epoch_loss += loss / out_dim as f64;
                        let mut up = head.backprop(&raw, &dmu, &dls);
                        up.iter_mut().for_each(|g| *g *= scale);
                        net.backward(&tape, &up, &mut grads)?;
                    }
                    let name = format!("model member {m}");
                    self.optimizers[m].step(&name, self.members[m].params_mut(), &grads)?;
                }
                train_nll[m].push(epoch_loss / perm.len() as f64);
            }
        }

        let mut holdout_nll = Vec::with_capacity(members);
        for m in 0..members {
            holdout_nll.push(self.per_coord_nll(m, &hold_set)?);
        }
        let mut ranked: Vec<usize> = (0..members).collect();
        ranked.sort_by(|&a, &b| holdout_nll[a].total_cmp(&holdout_nll[b]).then(a.cmp(&b)));
        self.elites = ranked[..self.config.elites].to_vec();
        self.elites.sort_unstable();
        self.trained = true;

        let eval_idx: &[usize] = if n_hold > 0 { hold_idx } else { train_idx };
        let mut sq = 0.0;
        for &i in eval_idx {
            let t = buffer.get(i).expect("index within buffer");
            let p = self.expected_next(&t.obs, &t.action)?;
            sq += p.next_obs.iter().zip(&t.next_obs).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            sq += (p.reward - t.reward).powi(2);
        }
        let holdout_mse = sq / (eval_idx.len() * out_dim) as f64;

        Ok(ModelTrainReport {
            train_nll,
            holdout_nll_initial,
            holdout_nll,
            holdout_mse,
            elites: self.elites.clone(),
            holdout_size: n_hold,
        })
    }

    /// Writes members, normalisers and elites under `prefix`.
    pub fn write_bundle(&self, bundle: &mut Bundle, prefix: &str) {
        let meta = serde_json::json!({
            "config": self.config,
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "trained": self.trained,
        });
        bundle.put_text(format!("{prefix}meta"), meta.to_string());
        for (i, m) in self.members.iter().enumerate() {
            bundle.put_mlp(format!("{prefix}member{i}"), m);
        }
        bundle.put_vector(format!("{prefix}input_mean"), &self.input_norm.mean);
        bundle.put_vector(format!("{prefix}input_std"), &self.input_norm.std);
        bundle.put_vector(format!("{prefix}target_mean"), &self.target_norm.mean);
        bundle.put_vector(format!("{prefix}target_std"), &self.target_norm.std);
        let elites: Vec<f64> = self.elites.iter().map(|&e| e as f64).collect();
        bundle.put_vector(format!("{prefix}elites"), &elites);
    }

    pub fn read_bundle(bundle: &Bundle, prefix: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Meta {
            config: EnsembleConfig,
            obs_dim: usize,
            action_dim: usize,
            trained: bool,
        }
        let corrupt = |m: String| ModelError::Checkpoint(crate::checkpoint::CheckpointError::Corrupt(m));
        let meta: Meta = serde_json::from_str(bundle.text(&format!("{prefix}meta"))?)
            .map_err(|e| corrupt(format!("model metadata: {e}")))?;
        meta.config.validate()?;
        let members: Vec<Mlp> = (0..meta.config.members)
            .map(|i| bundle.mlp(&format!("{prefix}member{i}")).cloned())
            .collect::<Result<_, _>>()?;
        let optimizers = members
            .iter()
            .map(|m| Adam::new(AdamConfig::with_lr(meta.config.lr), m.num_params()))
            .collect();
        let vec = |name: &str| bundle.vector(&format!("{prefix}{name}")).map(<[f64]>::to_vec);
        let elites: Vec<usize> = vec("elites")?.iter().map(|&e| e as usize).collect();
        if elites.iter().any(|&e| e >= members.len()) {
            return Err(corrupt("elite index out of range".into()));
        }
        Ok(Self {
            obs_dim: meta.obs_dim,
            action_dim: meta.action_dim,
            members,
            optimizers,
            input_norm: Normalizer {
                mean: vec("input_mean")?,
                std: vec("input_std")?,
            },
            target_norm: Normalizer {
                mean: vec("target_mean")?,
                std: vec("target_std")?,
            },
            elites,
            trained: meta.trained,
            config: meta.config,
        })
    }
}

impl TransitionModel for EnsembleModel {
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn num_particles(&self) -> usize {
        self.elites.len()
    }

    fn predict_mean(
        &self,
        obs: &[f64],
        action: &[f64],
        particle: usize,
    ) -> Result<(Vec<f64>, f64), ModelError> {
        if !self.trained {
            return Err(ModelError::Untrained);
        }
        let member = self.elites[particle % self.elites.len()];
        let (mu, _) = self.member_distribution(member, obs, action)?;
        let p = self.assemble(obs, &mu);
        Ok((p.next_obs, p.reward))
    }
}
