//! Discrete factorial goal representations for goal-conditioned RL.
//!
//! The crate is organised around the training pipeline:
//!
//! - [`nn`]: dense networks, reverse-mode gradients, Adam, checkpoints.
//! - [`vq`]: the multi-factor vector-quantization bottleneck.
//! - [`repr`]: autoencoder pretraining over observations and the
//!   factor-ablation probe.
//! - [`env`]: pixel gridworlds (SpiralWorld, LoopWorld, KeyChest).
//! - [`agent`]: goal-conditioned DQN, intrinsic factor-match reward, and a
//!   two-level hierarchical agent.
//! - [`theory`]: empirical checker for the quantized-goal generalization
//!   bound.

pub mod agent;
pub mod env;
pub mod error;
pub mod nn;
pub mod repr;
pub mod theory;
pub mod vq;

pub use error::{Error, Result};
