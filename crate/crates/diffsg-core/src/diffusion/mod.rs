//! Forward noising, the training objective, and DDPM/DDIM sampling with
//! classifier-free guidance.
//!
//! The model predicts the noise added at each step (epsilon
//! parameterization). Sampling runs the learned reverse process from pure
//! noise; the guided estimate extrapolates the conditional prediction away
//! from the unconditional one by the condition strength `omega`.

mod sampler;
mod schedule;
mod train;

pub use sampler::{
    cfg_eps, cfg_eps_into, ddim_sample, ddim_step, ddpm_sample, ddpm_step, sample, SamplerConfig,
    SamplerKind,
};
pub use schedule::NoiseSchedule;
pub use train::{fit_denoiser, q_sample, training_step, EpochLoss, GuidanceConfig, TrainConfig};
