//! Stage two: a denoising diffusion model over the stage-one latent table,
//! optionally conditioned by concatenating a vector to the noisy latent.

pub mod denoiser;
pub mod sample;
pub mod schedule;
pub mod train;

pub use denoiser::{denoiser_arch, denoiser_loss, Denoiser, DenoiserConfig, NoiseTarget};
pub use sample::{denoise_chains, from_latent, generate, reverse_mean, reverse_step, reverse_step_with, to_latent};
pub use schedule::{forward_sample, forward_step, make_schedule, time_embedding, ScheduleSpec, VarianceSchedule};
pub use train::{latent_scale, train_diffusion, DiffusionTrainer};
