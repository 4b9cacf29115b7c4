//! Shared learning machinery: MLP function approximators with hand-rolled
//! backprop over flat `f64` parameter vectors, the Adam optimizer, EMA
//! parameter tracking, and the common checkpoint file format.

mod adam;
mod checkpoint;
mod ema;
mod gradcheck;
mod mlp;

pub use adam::{adam_step, AdamParams, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, Section};
pub use ema::{ema_update, EmaTracker};
pub use gradcheck::check_gradient;
pub use mlp::{Activation, Approximator, MlpArch, MlpCache, OutputActivation};
