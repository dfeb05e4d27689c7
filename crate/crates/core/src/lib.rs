//! Failure-prefix conditioning for GRPO, on a verifiable graph-navigation world.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: the world, questions, episode stepping and the reward checker.
//! - [`policy`]: the tabular softmax policy, exact sampling and gradients, and
//!   supervised pretraining.
//! - [`grpo`]: group advantages, the clip-higher surrogate and the trainer.
//! - [`conditioning`]: saturation scans, prefix sweeps, dataset construction
//!   and refresh.
//! - [`eval`]: pass@k, budget sweeps and recovery curves.
//! - [`experiment`]: the end-to-end comparisons.
//!
//! Sampling is seeded per `(run seed, phase, question, rollout)` through
//! [`rng::SeedStream`], so every result is identical under parallel
//! ([`par`], feature `parallel`) and sequential execution.

pub mod conditioning;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grpo;
pub mod io;
pub mod par;
pub mod policy;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
