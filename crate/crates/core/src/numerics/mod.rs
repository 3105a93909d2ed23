//! Tensor substrate, reverse-mode autodiff, shared layers and Adam.

mod adam;
pub mod nn;
mod tensor;

pub use adam::{adam_step, global_grad_norm, AdamConfig, AdamState};
pub use nn::{
    copy_params, cosine, freeze, is_frozen, unfreeze, zero_grads, EncoderLayer, FeedForward, LayerNorm,
    Linear, Mlp, Module, MultiHeadAttention, Parameter,
};
pub use tensor::{layer_norm, Tensor, GATHER_ZERO};

/// Lower bound on vector norms inside every cosine similarity.
pub const NORM_FLOOR: f32 = 1e-8;
