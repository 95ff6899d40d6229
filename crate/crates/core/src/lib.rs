//! Variational Gaussian-process auto-encoder for multi-view data with ordinal
//! outputs.
//!
//! A GP encoder maps the concatenated views to a leave-one-out cavity over
//! latent points, a GP decoder per view reconstructs the observations, and an
//! ordinal threshold model predicts discrete intensity levels from the
//! latent space. Training maximizes a Monte-Carlo evidence lower bound with
//! AdaDelta.

pub mod data;
pub mod error;
pub mod generative;
pub mod inference;
pub mod kernel;
pub mod metrics;
mod matrix_serde;
pub mod model;
pub mod normal;
pub mod ordinal;
pub mod recognition;
pub mod run;
pub mod sampling;
pub mod trainer;

pub use error::{Result, VgpError};
pub use model::FittedModel;
pub use trainer::{train, TrainConfig};
