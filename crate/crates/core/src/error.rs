use thiserror::Error;

use crate::agents::AgentError;
use crate::backtest::MetricError;
use crate::checkpoint::CheckpointError;
use crate::dynamics::ModelError;
use crate::env::EnvError;
use crate::indicators::IndicatorError;
use crate::market_data::DataError;
use crate::nn::NnError;

/// Crate-wide error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
