//! Minimal deterministic neural-network core.
//!
//! A fixed op set with hand-written backward passes (no tape), a named
//! parameter store, Adam, the `AVQC` checkpoint format and a finite-difference
//! checker used to verify every backward pass.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use attention::{AttentionCache, MultiHeadAttention};
pub use params::{Conv2d, Gradients, LayerNorm, Linear, Param, ParamId, ParamStore};
pub use tensor::Tensor;
