//! Category-guided diffusion recommender.
//!
//! A conditional denoiser is trained over binary user interaction vectors.
//! At inference the reverse process is steered toward an arbitrary target
//! distribution over item categories with classifier-free guidance, which
//! gives direct control over how diverse the top-K list is.
//!
//! Module map:
//!
//! * [`dataset`] ingestion, k-core filtering, splits, toy and semi-synthetic data
//! * [`schedule`] noise schedule, forward corruption, posterior coefficients
//! * [`nnet`] dense layers, analytic backprop, AdamW, gradient checking
//! * [`denoiser`] the two-tower conditional x0 predictor
//! * [`training`] losses, category re-weighting, training loop
//! * [`inference`] temperature shaping, guided reverse process, top-K
//! * [`metrics`] Recall/NDCG/Entropy/Coverage and tau sweeps
//! * [`checkpoint`] model persistence

pub mod checkpoint;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod nnet;
pub mod schedule;
pub mod training;

pub use error::{Error, Result};

/// Smoothing added wherever a log of a possibly-zero probability is taken.
pub const LOG_EPS: f64 = 1e-8;
