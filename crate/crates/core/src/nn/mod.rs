//! Minimal dense numerical core: tensors, transformer layers with analytic
//! gradients, AdamW, and a finite-difference harness.

pub mod adam;
pub mod attention;
pub mod block;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attention::{causal_self_attention, Attention, AttentionCache};
pub use block::{transformer_block, Block, BlockCache};
pub use gradcheck::{central_difference, grad_check, GradCheckReport};
pub use ops::{gelu, gelu_grad, linear, linear_backward, LayerNorm, Linear, LinearGrads, Mlp};
pub use params::ParamSet;
pub use tensor::Tensor2D;
