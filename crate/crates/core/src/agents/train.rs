//! The model-based training loop and deterministic evaluation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    AgentError, CemConfig, History, HistoryRow, ImproveContext, SacConfig, Strategy,
    StrategyRegistry, StrategySpec,
};
use crate::backtest::EquityCurve;
use crate::checkpoint::Bundle;
use crate::dynamics::{EnsembleConfig, EnsembleModel, ModelTrainConfig, ReplayBuffer, Transition};
use crate::env::{
    apply_rsrs_override, holdings_coords, observation_dim, Action, EnvConfig, EnvSlice, TradingEnv,
    BALANCE_COORD,
};
use crate::rng::{rng_from, stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Registered strategy name.
    pub variant: String,
    /// `E`.
    pub epochs: usize,
    /// `N`, real steps per epoch; the environment resets at episode end.
    pub steps_per_epoch: usize,
    /// `L`, model rollouts after each real step.
    pub rollouts_per_step: usize,
    /// `k`.
    pub rollout_length: usize,
    /// `W`, gradient updates after each real step.
    pub updates_per_step: usize,
    pub batch_size: usize,
    /// Uniform-random real steps collected before the first epoch.
    pub warmup_steps: usize,
    pub keep_fraction: f64,
    /// Share of each update batch drawn from real rather than model data.
    pub real_ratio: f64,
    pub env_buffer_capacity: usize,
    pub model_buffer_capacity: usize,
    pub model_train: ModelTrainConfig,
    pub ensemble: EnsembleConfig,
    pub sac: SacConfig,
    pub cem: CemConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: "rsac".into(),
            epochs: 10,
            steps_per_epoch: 250,
            rollouts_per_step: 256,
            rollout_length: 3,
            updates_per_step: 20,
            batch_size: 256,
            warmup_steps: 1000,
            keep_fraction: 0.5,
            real_ratio: 0.0,
            env_buffer_capacity: 1_000_000,
            model_buffer_capacity: 100_000,
            model_train: ModelTrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            sac: SacConfig::default(),
            cem: CemConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        for (name, v) in [
            ("epochs", self.epochs),
            ("steps_per_epoch", self.steps_per_epoch),
            ("rollout_length", self.rollout_length),
            ("batch_size", self.batch_size),
            ("env_buffer_capacity", self.env_buffer_capacity),
            ("model_buffer_capacity", self.model_buffer_capacity),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return bad(format!("real_ratio {} must lie in [0, 1]", self.real_ratio));
        }
        self.sac.validate()?;
        self.cem.validate()?;
        self.ensemble.validate()?;
        Ok(())
    }

    pub fn strategy_spec(&self, num_stocks: usize) -> StrategySpec {
        StrategySpec {
            obs_dim: observation_dim(num_stocks),
            action_dim: num_stocks,
            sac: self.sac.clone(),
            cem: self.cem.clone(),
            keep_fraction: self.keep_fraction,
        }
    }
}

pub struct TrainOutcome {
    pub strategy: Box<dyn Strategy>,
    pub model: EnsembleModel,
    pub history: History,
    pub env_transitions: usize,
    pub model_transitions: usize,
}

impl TrainOutcome {
    /// Strategy, dynamics model and run metadata (seed, config) in one bundle.
    pub fn checkpoint(&self, seed: u64, config: &TrainConfig) -> Bundle {
        let mut b = Bundle::new();
        self.strategy.write_bundle(&mut b);
        self.model.write_bundle(&mut b, "model/");
        b.put_text("train_config", serde_json::to_string(config).expect("config serialises"));
        b.put_text("seed", seed.to_string());
        b
    }
}

fn forced(rightdev: &[Option<f64>], cfg: &EnvConfig) -> usize {
    if !cfg.override_enabled {
        return 0;
    }
    rightdev
        .iter()
        .filter(|r| matches!(r, Some(x) if *x > cfg.rs_buy || *x < cfg.rs_sell))
        .count()
}

fn check_finite(what: &str, v: f64, epoch: usize, step: usize) -> Result<(), AgentError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(AgentError::NonFinite {
            what: what.to_string(),
            detail: format!("value {v} at epoch {epoch}, step {step}"),
        })
    }
}

/// Runs `config.epochs` epochs of: fit the dynamics model on real data, then
/// for each real step act (with RSRS override for the override variants),
/// store the transition, and let the strategy improve from model rollouts.
pub fn train(
    config: &TrainConfig,
    env_config: &EnvConfig,
    slice: EnvSlice,
    seed: u64,
    registry: &StrategyRegistry,
) -> Result<TrainOutcome, AgentError> {
    config.validate()?;
    let d = slice.num_stocks();
    let spec = config.strategy_spec(d);
    let mut strategy = registry.build(&config.variant, &spec, &mut rng_from(seed, stream::POLICY_INIT))?;
    let env_cfg = EnvConfig {
        override_enabled: strategy.uses_override(),
        ..env_config.clone()
    };
    let mut env = TradingEnv::new(slice, env_cfg.clone())?;
    let mut model = EnsembleModel::new(
        spec.obs_dim,
        d,
        config.ensemble.clone(),
        &mut rng_from(seed, stream::MODEL_INIT),
    )?;
    let mut env_rng = rng_from(seed, stream::ENV);
    let mut model_rng = rng_from(seed, stream::MODEL_TRAIN);
    let mut action_rng = rng_from(seed, stream::ACTIONS);
    let mut rollout_rng = rng_from(seed, stream::ROLLOUTS);
    let mut update_rng = rng_from(seed, stream::UPDATES);

    let mut d_env = ReplayBuffer::new(config.env_buffer_capacity);
    let mut d_model = ReplayBuffer::new(config.model_buffer_capacity);
    let hmax = env_cfg.hmax;

    for _ in 0..config.warmup_steps {
        let obs = env.observation();
        let a: Vec<f64> = (0..d).map(|_| env_rng.random_range(-1.0..=1.0)).collect();
        let r = env.step(&Action::from_normalized(&a, hmax))?;
        d_env.push(Transition {
            obs,
            action: r.executed.to_normalized(hmax),
            next_obs: env.observation(),
            reward: r.reward,
            done: r.done,
        });
        if r.done {
            env.reset();
        }
    }

    let mut history = History::default();
    let mut step = 0usize;
    let hold = holdings_coords(d);
    for epoch in 1..=config.epochs {
        let (holdout_nll, holdout_mse) = if d_env.len() >= 2 {
            let report = model.train(&d_env, &config.model_train, &mut model_rng)?;
            (Some(report.mean_holdout_nll()), Some(report.holdout_mse))
        } else {
            (None, None)
        };
        for _ in 0..config.steps_per_epoch {
            step += 1;
            let obs = env.observation();
            let proposed = strategy.act(&obs, &model, false, &mut action_rng)?;
            let order = Action::from_normalized(&proposed, hmax);
            let rightdev = env.state().rightdev.clone();
            let overrides = forced(&rightdev, &env_cfg);
            let order = apply_rsrs_override(&order, &rightdev, &env_cfg);
            let r = env.step(&order)?;
            check_finite("environment reward", r.reward, epoch, step)?;
            let next_obs = env.observation();
            let action = r.executed.to_normalized(hmax);

            let (err_balance, err_holdings) = if model.is_trained() {
                let p = model.expected_next(&obs, &action)?;
                let b = (p.next_obs[BALANCE_COORD] - next_obs[BALANCE_COORD]).abs() * env_cfg.initial_balance;
                let h = hold
                    .clone()
                    .map(|i| (p.next_obs[i] - next_obs[i]).abs() * hmax as f64)
                    .sum::<f64>()
                    / d as f64;
                (Some(b), Some(h))
            } else {
                (None, None)
            };

            d_env.push(Transition {
                obs,
                action,
                next_obs,
                reward: r.reward,
                done: r.done,
            });
            if r.done {
                env.reset();
            }

            let stats = strategy.improve(ImproveContext {
                model: &model,
                env_buffer: &d_env,
                model_buffer: &mut d_model,
                rollouts: config.rollouts_per_step,
                rollout_length: config.rollout_length,
                updates: config.updates_per_step,
                batch_size: config.batch_size,
                real_ratio: config.real_ratio,
                rollout_rng: &mut rollout_rng,
                update_rng: &mut update_rng,
            })?;
            if let Some(l) = stats.losses {
                check_finite("critic loss", l.q_loss, epoch, step)?;
            }
            history.rows.push(HistoryRow {
                epoch,
                step,
                q_loss: stats.losses.map(|l| l.q_loss),
                pi_loss: stats.losses.map(|l| l.pi_loss),
                entropy: stats.losses.map(|l| l.entropy),
                model_holdout_nll: holdout_nll,
                env_reward: r.reward,
                action_mean: proposed.iter().sum::<f64>() / d as f64,
                executed_mean: r.executed.shares.iter().sum::<i64>() as f64 / d as f64,
                overrides,
                model_err_balance: err_balance,
                model_err_holdings: err_holdings,
                rollouts_kept: stats.kept,
                updates: stats.updates,
            });
        }
        let summary = history.summarize_epoch(epoch, holdout_mse);
        history.epochs.push(summary);
    }

    Ok(TrainOutcome {
        strategy,
        model,
        history,
        env_transitions: d_env.len(),
        model_transitions: d_model.len(),
    })
}

/// Result of one deterministic pass over a slice.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub curve: EquityCurve,
    pub overrides: usize,
}

/// Rolls the strategy's deterministic actions (plus the RSRS override for
/// override variants) through the slice once.
pub fn evaluate(
    strategy: &mut dyn Strategy,
    model: &EnsembleModel,
    slice: EnvSlice,
    env_config: &EnvConfig,
    rng: &mut Rng,
) -> Result<Evaluation, AgentError> {
    let cfg = EnvConfig {
        override_enabled: strategy.uses_override(),
        ..env_config.clone()
    };
    let dates = slice.dates().to_vec();
    let mut env = TradingEnv::new(slice, cfg.clone())?;
    let d = env.num_stocks();
    let mut assets = vec![crate::env::asset_value(env.state())];
    let mut rewards = Vec::new();
    let mut costs = Vec::new();
    let mut actions = Vec::new();
    let mut overrides = 0;
    loop {
        let obs = env.observation();
        let a = strategy.act(&obs, model, true, rng)?;
        if a.len() != d {
            return Err(AgentError::InvalidConfig(format!(
                "strategy produced {} actions for {d} stocks",
                a.len()
            )));
        }
        let rightdev = env.state().rightdev.clone();
        overrides += forced(&rightdev, &cfg);
        let order = apply_rsrs_override(&Action::from_normalized(&a, cfg.hmax), &rightdev, &cfg);
        let r = env.step(&order)?;
        assets.push(crate::env::asset_value(&r.next_state));
        rewards.push(r.reward);
        costs.push(r.cost);
        actions.push(r.executed.shares);
        if r.done {
            break;
        }
    }
    let curve = EquityCurve::with_trace(dates, assets, rewards, costs, actions)?;
    Ok(Evaluation { curve, overrides })
}
