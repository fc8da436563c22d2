//! DDPM over concatenated state-action vectors: schedule, noise model, training and sampling.

mod model;
mod sample;
mod schedule;
mod train;

pub use model::{diff_loss, noise_prediction_loss, DiffLossOutput, NoiseModel, NoisePredictor};
pub use sample::{
    field_csv, gradient_field, reconstruction_mse, reverse_chain, reverse_chain_rows, sample, FieldRow, FieldSpec,
};
pub use schedule::{
    forward_noise, DiffusionSchedule, NoiseLevel, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS, EMBED_DIM,
};
pub use train::{train_diffusion, train_diffusion_on, DiffusionTrainConfig};
