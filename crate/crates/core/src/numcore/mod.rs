//! Dense matrices, MLPs with reverse-mode gradients, Adam, and seeded RNG streams.

mod adam;
pub mod gradcheck;
mod matrix;
mod mlp;
mod rng;

pub use adam::{adam_step, AdamState, LrSchedule};
pub use matrix::Matrix;
pub use mlp::{mlp_backward, mlp_forward, Activation, MlpModel, Trace};
pub use rng::{rng_gaussian, rng_uniform, Rng, Stream};
