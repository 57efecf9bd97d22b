//! Trading strategies behind one trait, looked up by name at runtime.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{AgentError, CemConfig, CemPlanner, SacAgent, SacConfig, SacLosses};
use crate::checkpoint::Bundle;
use crate::dynamics::{mask_rollouts, EnsembleModel, MemberChoice, ReplayBuffer, Transition};
use crate::rng::Rng;

/// Everything a strategy factory needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub sac: SacConfig,
    pub cem: CemConfig,
    /// Fraction of model rollouts kept by masking variants.
    pub keep_fraction: f64,
}

/// Data and knobs for one round of policy improvement after a real step.
pub struct ImproveContext<'a> {
    pub model: &'a EnsembleModel,
    pub env_buffer: &'a ReplayBuffer,
    pub model_buffer: &'a mut ReplayBuffer,
    /// Number of rollouts `L` and their length `k`.
    pub rollouts: usize,
    pub rollout_length: usize,
    /// Gradient updates `W` and their batch size.
    pub updates: usize,
    pub batch_size: usize,
    /// Share of each batch drawn from real transitions.
    pub real_ratio: f64,
    pub rollout_rng: &'a mut Rng,
    pub update_rng: &'a mut Rng,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ImproveStats {
    pub generated: usize,
    pub kept: usize,
    pub updates: usize,
    /// Mean losses over the updates performed, if any.
    pub losses: Option<SacLosses>,
}

pub trait Strategy {
    fn name(&self) -> &str;

    /// Whether RSRS timing signals override this strategy's orders.
    fn uses_override(&self) -> bool;

    /// Normalised action in `[-1, 1]^D` for `obs`.
    fn act(
        &mut self,
        obs: &[f64],
        model: &EnsembleModel,
        deterministic: bool,
        rng: &mut Rng,
    ) -> Result<Vec<f64>, AgentError>;

    /// Improves the strategy after one real environment step.
    fn improve(&mut self, ctx: ImproveContext<'_>) -> Result<ImproveStats, AgentError>;

    /// Number of gradient updates performed so far.
    fn update_count(&self) -> u64;

    fn write_bundle(&self, bundle: &mut Bundle);
}

/// Soft actor-critic trained on model rollouts, optionally masked by model
/// uncertainty and optionally overridden by RSRS signals.
pub struct PolicyStrategy {
    name: String,
    pub agent: SacAgent,
    keep_fraction: Option<f64>,
    overridden: bool,
    updates: u64,
}

impl PolicyStrategy {
    pub fn new(name: &str, agent: SacAgent, keep_fraction: Option<f64>, overridden: bool) -> Self {
        Self {
            name: name.to_string(),
            agent,
            keep_fraction,
            overridden,
            updates: 0,
        }
    }

    pub fn keep_fraction(&self) -> Option<f64> {
        self.keep_fraction
    }
}

impl Strategy for PolicyStrategy {
    fn name(&self) -> &str {
        &self.name
    }

    fn uses_override(&self) -> bool {
        self.overridden
    }

    fn act(
        &mut self,
        obs: &[f64],
        _model: &EnsembleModel,
        deterministic: bool,
        rng: &mut Rng,
    ) -> Result<Vec<f64>, AgentError> {
        self.agent.select_action(obs, deterministic, rng)
    }

    fn improve(&mut self, ctx: ImproveContext<'_>) -> Result<ImproveStats, AgentError> {
        let mut stats = ImproveStats::default();
        if ctx.model.is_trained() && ctx.rollouts > 0 && !ctx.env_buffer.is_empty() {
            let starts: Vec<Vec<f64>> = ctx
                .env_buffer
                .sample(ctx.rollouts, ctx.rollout_rng)
                .into_iter()
                .map(|t| t.obs.clone())
                .collect();
            let agent = &self.agent;
            let mut policy = |o: &[f64], r: &mut Rng| {
                agent
                    .select_action(o, false, r)
                    .expect("model observations match the policy input width")
            };
            let imagined = ctx.model.rollout(
                &mut policy,
                &starts,
                ctx.rollout_length,
                MemberChoice::RandomElite,
                true,
                ctx.rollout_rng,
            )?;
            stats.generated = imagined.len();
            let kept = match self.keep_fraction {
                Some(keep) => {
                    let scores: Vec<f64> = imagined
                        .iter()
                        .map(|t| ctx.model.uncertainty(&t.obs, &t.action))
                        .collect::<Result<_, _>>()?;
                    mask_rollouts(&imagined, &scores, keep)?
                }
                None => imagined,
            };
            stats.kept = kept.len();
            ctx.model_buffer.extend(kept);
        }

        let mut sum = SacLosses {
            q_loss: 0.0,
            pi_loss: 0.0,
            entropy: 0.0,
        };
        for _ in 0..ctx.updates {
            let n_real = (ctx.real_ratio * ctx.batch_size as f64).round() as usize;
            let mut batch: Vec<&Transition> = ctx.env_buffer.sample(n_real, ctx.update_rng);
            batch.extend(ctx.model_buffer.sample(ctx.batch_size - n_real.min(ctx.batch_size), ctx.update_rng));
            if batch.is_empty() {
                break;
            }
            let l = self.agent.update(&batch, ctx.update_rng)?;
            self.updates += 1;
            stats.updates += 1;
            sum.q_loss += l.q_loss;
            sum.pi_loss += l.pi_loss;
            sum.entropy += l.entropy;
        }
        if stats.updates > 0 {
            let n = stats.updates as f64;
            stats.losses = Some(SacLosses {
                q_loss: sum.q_loss / n,
                pi_loss: sum.pi_loss / n,
                entropy: sum.entropy / n,
            });
        }
        Ok(stats)
    }

    fn update_count(&self) -> u64 {
        self.updates
    }

    fn write_bundle(&self, bundle: &mut Bundle) {
        bundle.put_text("strategy", self.name.clone());
        if let Some(keep) = self.keep_fraction {
            bundle.put_vector("keep_fraction", &[keep]);
        }
        self.agent.write_bundle(bundle, "agent/");
    }
}

/// Model-predictive control with CEM over the learned ensemble; no learned
/// policy and no gradient updates.
pub struct PetsStrategy {
    planner: CemPlanner,
    action_dim: usize,
}

impl PetsStrategy {
    pub fn new(planner: CemPlanner, action_dim: usize) -> Self {
        Self { planner, action_dim }
    }
}

impl Strategy for PetsStrategy {
    fn name(&self) -> &str {
        "pets"
    }

    fn uses_override(&self) -> bool {
        false
    }

    fn act(
        &mut self,
        obs: &[f64],
        model: &EnsembleModel,
        _deterministic: bool,
        rng: &mut Rng,
    ) -> Result<Vec<f64>, AgentError> {
        if !model.is_trained() {
            return Ok((0..self.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect());
        }
        self.planner.plan(model, obs, rng)
    }

    fn improve(&mut self, _ctx: ImproveContext<'_>) -> Result<ImproveStats, AgentError> {
        Ok(ImproveStats::default())
    }

    fn update_count(&self) -> u64 {
        0
    }

    fn write_bundle(&self, bundle: &mut Bundle) {
        bundle.put_text("strategy", "pets");
        let cfg = serde_json::to_string(&self.planner.config).expect("config serialises");
        bundle.put_text("cem_config", cfg);
        bundle.put_vector("action_dim", &[self.action_dim as f64]);
    }
}

pub type StrategyFactory = fn(&StrategySpec, &mut Rng) -> Result<Box<dyn Strategy>, AgentError>;

/// Name → constructor table for strategies.
#[derive(Clone)]
pub struct StrategyRegistry {
    factories: BTreeMap<String, StrategyFactory>,
}

fn policy_variant(
    name: &'static str,
    masked: bool,
    overridden: bool,
    spec: &StrategySpec,
    rng: &mut Rng,
) -> Result<Box<dyn Strategy>, AgentError> {
    if masked && !(spec.keep_fraction > 0.0 && spec.keep_fraction <= 1.0) {
        return Err(AgentError::InvalidConfig(format!(
            "keep_fraction {} must lie in (0, 1]",
            spec.keep_fraction
        )));
    }
    let agent = SacAgent::new(spec.obs_dim, spec.action_dim, spec.sac.clone(), rng)?;
    let keep = masked.then_some(spec.keep_fraction);
    Ok(Box::new(PolicyStrategy::new(name, agent, keep, overridden)))
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `pets`, `mbpo`, `m2ac` (masked), `rspo` (mbpo + override) and `rsac`
    /// (m2ac + override).
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register("pets", |spec, _| {
            Ok(Box::new(PetsStrategy::new(
                CemPlanner::new(spec.cem.clone(), spec.action_dim)?,
                spec.action_dim,
            )))
        });
        r.register("mbpo", |spec, rng| policy_variant("mbpo", false, false, spec, rng));
        r.register("m2ac", |spec, rng| policy_variant("m2ac", true, false, spec, rng));
        r.register("rspo", |spec, rng| policy_variant("rspo", false, true, spec, rng));
        r.register("rsac", |spec, rng| policy_variant("rsac", true, true, spec, rng));
        r
    }

    pub fn register(&mut self, name: &str, factory: StrategyFactory) {
        self.factories.insert(name.to_ascii_lowercase(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(&name.to_ascii_lowercase())
    }

    pub fn build(&self, name: &str, spec: &StrategySpec, rng: &mut Rng) -> Result<Box<dyn Strategy>, AgentError> {
        let factory = self
            .factories
            .get(&name.to_ascii_lowercase())
            .ok_or_else(|| AgentError::UnknownStrategy {
                name: name.to_string(),
                known: self.names().join(", "),
            })?;
        factory(spec, rng)
    }

    /// Restores a policy strategy saved with [`Strategy::write_bundle`].
    pub fn restore(&self, bundle: &Bundle) -> Result<Box<dyn Strategy>, AgentError> {
        let name = bundle.text("strategy")?.to_string();
        if name == "pets" {
            let cfg: CemConfig = serde_json::from_str(bundle.text("cem_config")?)
                .map_err(|e| AgentError::InvalidConfig(format!("checkpoint CEM config: {e}")))?;
            let d = bundle.vector("action_dim")?.first().copied().unwrap_or(0.0) as usize;
            return Ok(Box::new(PetsStrategy::new(CemPlanner::new(cfg, d)?, d)));
        }
        let (masked, overridden) = match name.as_str() {
            "mbpo" => (false, false),
            "m2ac" => (true, false),
            "rspo" => (false, true),
            "rsac" => (true, true),
            other => {
                return Err(AgentError::UnknownStrategy {
                    name: other.to_string(),
                    known: self.names().join(", "),
                })
            }
        };
        let agent = SacAgent::read_bundle(bundle, "agent/")?;
        let keep = if masked {
            Some(bundle.vector("keep_fraction")?.first().copied().unwrap_or(0.5))
        } else {
            None
        };
        let label: &'static str = match name.as_str() {
            "mbpo" => "mbpo",
            "m2ac" => "m2ac",
            "rspo" => "rspo",
            _ => "rsac",
        };
        Ok(Box::new(PolicyStrategy::new(label, agent, keep, overridden)))
    }
}
