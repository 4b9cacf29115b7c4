//! Conditional diffusion world model: forward noising, guided
//! noise-prediction training, and conditioned (inpainted) stride-accelerated
//! sampling of (state, reward) futures.

mod epsnet;
mod model;
mod sampler;
mod schedule;

pub use epsnet::{sinusoidal_embedding, EpsCache, EpsNet};
pub use model::{
    load_dwm_checkpoint, save_dwm_checkpoint, train_dwm, DiffusionWorldModel, DwmConfig,
    NoisedBatch, NoisedItem, TrainLogRow,
};
pub use sampler::{guided_epsilon, posterior_step, stride_steps, DwmPrediction};
pub use schedule::{cosine_schedule, forward_noise, NoiseSchedule};
