//! Gradient-space multi-reward balancing for RL fine-tuning of flow models.
//!
//! A training step scores each rollout against several reward functions,
//! turns the scores into per-reward z-score advantages, derives per-reward
//! policy gradients from an interpolation-based velocity-matching loss, and
//! harmonizes those gradients into a single update direction by solving a
//! min-norm quadratic program over the probability simplex. Because the loss
//! is affine in the interpolation coefficient, a convex combination of
//! per-reward gradients can be reproduced with one backward pass through a
//! combined advantage, so the solve can be amortized over an interval and the
//! coefficients smoothed with an EMA.
//!
//! Module map:
//! - [`simplex_qp`]: min-norm point over the simplex, projections, Gram matrices
//! - [`advantage`]: per-prompt-group reward statistics and z-score advantages
//! - [`nft`]: velocity-prediction model, interpolated loss, manual reverse-mode gradients
//! - [`harmonizer`]: normalization, QP solve, EMA smoothing, amortized stepping
//! - [`toy_env`]: conditional 2-D generation task with conflicting synthetic rewards
//! - [`ddp_sim`]: deterministic simulation of multi-worker gradient synchronization
//! - [`diagnostics`]: update-direction harmony statistics and metrics files
//! - [`pipeline`]: end-to-end training loop gluing the pieces together

pub mod advantage;
pub mod ddp_sim;
pub mod diagnostics;
pub mod error;
pub mod gradient;
pub mod harmonizer;
pub mod nft;
pub mod pipeline;
pub mod simplex_qp;
pub mod toy_env;

pub use error::{Error, Result};
pub use gradient::GradientVector;
