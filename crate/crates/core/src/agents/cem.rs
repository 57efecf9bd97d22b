//! Cross-entropy method planning over action sequences.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::dynamics::TransitionModel;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub init_std: f64,
    pub min_std: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            population: 64,
            elites: 8,
            iterations: 4,
            init_std: 0.5,
            min_std: 0.01,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if self.horizon == 0 || self.population == 0 {
            return bad("CEM horizon and population must be positive");
        }
        if self.elites == 0 || self.elites > self.population {
            return bad("CEM elites must lie in 1..=population");
        }
        if !(self.min_std > 0.0 && self.init_std >= self.min_std) {
            return bad("CEM needs 0 < min_std <= init_std");
        }
        Ok(())
    }
}

/// Mean and standard deviation (floored at `min_std`) of the `elites`
/// highest-scoring candidates; ties favour earlier candidates.
pub fn refit(candidates: &[Vec<f64>], scores: &[f64], elites: usize, min_std: f64) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let chosen = &order[..elites.min(order.len())];
    let dim = candidates[0].len();
    let k = chosen.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in chosen {
        mean.iter_mut().zip(&candidates[i]).for_each(|(m, x)| *m += x / k);
    }
    let mut var = vec![0.0; dim];
    for &i in chosen {
        var.iter_mut()
            .zip(candidates[i].iter().zip(&mean))
            .for_each(|(v, (x, m))| *v += (x - m) * (x - m) / k);
    }
    let std = var.iter().map(|v| v.sqrt().max(min_std)).collect();
    (mean, std)
}

#[derive(Debug, Clone)]
pub struct CemPlanner {
    pub config: CemConfig,
    action_dim: usize,
}

impl CemPlanner {
    pub fn new(config: CemConfig, action_dim: usize) -> Result<Self, AgentError> {
        config.validate()?;
        Ok(Self { config, action_dim })
    }

    /// Average return of an action sequence over the model's particles.
    fn score(&self, model: &dyn TransitionModel, obs: &[f64], plan: &[f64]) -> Result<f64, AgentError> {
        let particles = model.num_particles().max(1);
        let mut total = 0.0;
        for p in 0..particles {
            let mut state = obs.to_vec();
            for step in plan.chunks(self.action_dim) {
                let (next, reward) = model.predict_mean(&state, step, p)?;
                total += reward;
                state = next;
            }
        }
        Ok(total / particles as f64)
    }

    /// Returns the first action of the refined mean sequence, in `[-1, 1]`.
    pub fn plan(&self, model: &dyn TransitionModel, obs: &[f64], rng: &mut Rng) -> Result<Vec<f64>, AgentError> {
        let c = &self.config;
        let len = c.horizon * self.action_dim;
        let mut mean = vec![0.0; len];
        let mut std = vec![c.init_std; len];
        for _ in 0..c.iterations {
            let mut candidates = Vec::with_capacity(c.population);
            let mut scores = Vec::with_capacity(c.population);
            for _ in 0..c.population {
                let plan: Vec<f64> = mean
                    .iter()
                    .zip(&std)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(rng);
                        (m + s * z).clamp(-1.0, 1.0)
                    })
                    .collect();
                scores.push(self.score(model, obs, &plan)?);
                candidates.push(plan);
            }
            (mean, std) = refit(&candidates, &scores, c.elites, c.min_std);
        }
        Ok(mean[..self.action_dim].to_vec())
    }
}
