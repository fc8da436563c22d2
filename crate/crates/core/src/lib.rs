//! Diffusion-model-augmented behavioral cloning toolkit.

// `!(x > 0.0)` is used on purpose so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dbc;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod numcore;
pub mod textfmt;
pub mod training;

pub use error::{Error, Result};
