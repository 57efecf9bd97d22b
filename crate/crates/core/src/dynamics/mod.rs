//! Probabilistic ensemble dynamics model, replay storage and rollout masking.

mod buffer;
mod ensemble;
mod normalizer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::nn::NnError;
use crate::rng::Rng;

pub use buffer::ReplayBuffer;
pub use ensemble::{
    EnsembleConfig, EnsembleModel, MemberChoice, ModelTrainConfig, ModelTrainReport, Prediction,
};
pub use normalizer::Normalizer;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least {needed} transitions to train, buffer holds {got}")]
    BufferTooSmall { needed: usize, got: usize },
    #[error("model has not been trained")]
    Untrained,
    #[error("member index {index} out of range for an ensemble of {members}")]
    MemberOutOfRange { index: usize, members: usize },
    #[error("uncertainty needs at least two elites, model has {0}")]
    TooFewElites(usize),
    #[error("{items} items but {scores} scores")]
    Misaligned { items: usize, scores: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("transition width mismatch: expected {expected}, got {got}")]
    Width { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// One step of experience, real or imagined. Actions are normalised to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Chooses actions during model rollouts.
pub trait RolloutPolicy {
    fn act(&mut self, obs: &[f64], rng: &mut Rng) -> Vec<f64>;
}

impl<F: FnMut(&[f64], &mut Rng) -> Vec<f64>> RolloutPolicy for F {
    fn act(&mut self, obs: &[f64], rng: &mut Rng) -> Vec<f64> {
        self(obs, rng)
    }
}

/// A one-step simulator with several deterministic "particles", as consumed
/// by planners.
pub trait TransitionModel {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn num_particles(&self) -> usize;
    /// Mean `(next_obs, reward)` under particle `particle`.
    fn predict_mean(
        &self,
        obs: &[f64],
        action: &[f64],
        particle: usize,
    ) -> Result<(Vec<f64>, f64), ModelError>;
}

/// Keeps the `⌈keep_fraction·n⌉` items with the lowest scores, in their
/// original order. Equal scores favour the earlier item.
pub fn mask_rollouts<T: Clone>(
    items: &[T],
    scores: &[f64],
    keep_fraction: f64,
) -> Result<Vec<T>, ModelError> {
    if items.len() != scores.len() {
        return Err(ModelError::Misaligned {
            items: items.len(),
            scores: scores.len(),
        });
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(ModelError::InvalidConfig(format!(
            "keep_fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let n = items.len();
    let keep = ((keep_fraction * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| items[i].clone()).collect())
}
