//! Dense tensors, a reverse-mode tape, and the layers built on them.

pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use layers::{
    batched_key_padding_bias, key_padding_bias, sinusoidal_positions, LayerNorm, Linear, Mlp,
    MultiHeadAttention, Scope, MASKED_SCORE,
};
pub use params::{Param, ParamGroup, ParamId, ParamStore};
pub use tape::{concat, Gradients, Tape, Var};
pub use tensor::Tensor;
