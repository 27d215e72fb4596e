//! Diffusion-based solution generation for network resource-allocation
//! problems, with the case problems, oracles, baselines, and evaluation
//! harness needed to run the whole pipeline on a desktop CPU.
//!
//! Modules:
//! - [`rng`]: seeded, cross-platform-deterministic random streams
//! - [`nn`]: dense layers, SiLU, Adam, finite-difference gradient checks
//! - [`denoiser`]: the U-Net-shaped residual MLP noise predictor
//! - [`diffusion`]: noise schedule, training objective, DDPM/DDIM samplers
//!   with classifier-free guidance
//! - [`problems`]: the CO / MSR / NU case problems with oracles
//! - [`data`]: dataset generation, normalization, persistence
//! - [`baselines`]: Lagrangian gradient descent and a regression network
//! - [`eval`]: best-of-K scoring, reports, trajectory export
//! - [`checkpoint`]: self-describing parameter container

pub mod checkpoint;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod nn;
pub mod problems;
pub mod rng;

pub mod baselines;

pub use error::{Error, Result};
pub use rng::Rng;
