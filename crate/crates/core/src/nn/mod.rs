//! Minimal neural substrate.
//!
//! Fixed feed-forward architectures with hand-derived backward passes; every
//! gradient path is checked against central finite differences in the tests.

mod adam;
mod gaussian;
mod mlp;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use gaussian::{
    gaussian_nll, gaussian_nll_grad, squashed_gaussian_sample, squashed_sample_grads,
    GaussianHead, SquashedSample, LOG_2PI,
};
pub use mlp::{polyak_update, Activation, Mlp, Tape};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("backward called without a recorded forward pass")]
    MissingTape,
    #[error("non-finite gradient in parameter block {0}")]
    NonFinite(String),
}
