//! Quantitative trading research engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`market_data`]: OHLCV loading, calendar alignment, splits and synthetic markets.
//! - [`indicators`]: technical factors and the RSRS resistance/support timing score.
//! - [`env`]: the multi-stock trading MDP (accounting, costs, reward, RSRS override).
//! - [`nn`]: small MLPs with hand-written backward passes, Gaussian heads and Adam.
//! - [`dynamics`]: probabilistic ensemble transition model, replay buffers and rollouts.
//! - [`agents`]: SAC, CEM planning and the registry of trading strategies
//!   (PETS, MBPO, M2AC, RSPO, RSAC) together with the training loop.
//! - [`backtest`]: performance metrics, baselines and report files.
//! - [`selftest`]: embedded oracle checks used by `quant selftest`.

pub mod agents;
pub mod backtest;
pub mod checkpoint;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod indicators;
pub mod market_data;
pub mod nn;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};
