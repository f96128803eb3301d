//! Numeric substrate: dense matrices, MLPs with exact backprop, Adam, and
//! seeded sampling. Everything is `f64`.

mod adam;
mod matrix;
mod mlp;
mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::{axpy, dot, Matrix};
pub use mlp::{Activation, Backprop, ForwardCache, Gradients, Mlp};
pub use rng::{
    beta_time_from_uniform, mix_seed, sample_beta_time, sample_gaussian_chunk, SeededRng,
};
