//! Policy optimisation and control: soft actor-critic, CEM planning, the
//! model-based training loop and the strategy registry.

mod cem;
mod history;
mod sac;
mod strategy;
mod train;

use thiserror::Error;

pub use cem::{refit, CemConfig, CemPlanner};
pub use history::{EpochSummary, History, HistoryRow};
pub use sac::{entropy, SacAgent, SacConfig, SacLosses};
pub use strategy::{
    ImproveContext, ImproveStats, PetsStrategy, PolicyStrategy, Strategy, StrategyFactory,
    StrategyRegistry, StrategySpec,
};
pub use train::{evaluate, train, Evaluation, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {what}: {detail}")]
    NonFinite { what: String, detail: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown strategy {name:?}; known: {known}")]
    UnknownStrategy { name: String, known: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Model(#[from] crate::dynamics::ModelError),
    #[error(transparent)]
    Env(#[from] crate::env::EnvError),
    #[error(transparent)]
    Metric(#[from] crate::backtest::MetricError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}
