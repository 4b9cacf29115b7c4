//! Desk-scale offline model-based reinforcement learning laboratory.
//!
//! The pipeline has two stages. Stage one fits a world model to a fixed
//! offline dataset: either a conditional diffusion model that generates whole
//! (state, reward) futures in one reverse process, or a one-step Gaussian
//! dynamics model that must be queried recursively. Stage two trains offline
//! actor-critic agents (TD3+BC, IQL, PQL variants) whose critic targets are
//! built by value expansion over imagined trajectories from either model.
//!
//! Everything runs on plain `f64` vectors with hand-rolled backprop, so all
//! training losses are checkable against finite differences and every run is
//! bit-reproducible from its config and seed.

pub mod agents;
pub mod cli;
pub mod dataset;
pub mod dwm;
pub mod envsim;
pub mod error;
pub mod evalharness;
pub mod onestep;
pub mod rngutil;
pub mod substrate;
pub mod value_target;

pub use error::{Error, Result};
