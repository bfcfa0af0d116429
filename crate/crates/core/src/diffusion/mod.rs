//! Noise schedule, conditional denoiser, training loop, DDIM sampler and an
//! analytic Gaussian oracle for validating the sampler without a network.

mod checkpoint;
mod denoiser;
mod sampler;
mod schedule;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use denoiser::{time_embedding, Denoiser, TIME_EMBED_DIM, TIME_FREQUENCIES};
pub use sampler::{analytic_gaussian_eps, analytic_gaussian_x0, ddim_sample, Model};
pub use schedule::{NoiseSchedule, ScheduleParams};
pub use train::{
    dataset_mean, smoothed_loss, train, train_with_progress, TrainConfig, TrainProgress,
    LOSS_WINDOW,
};
