//! Minimal f64 network toolkit with hand-written backward passes.
//!
//! Layers keep no activation caches: forward passes are `&self` (except batch
//! norm in training mode, which updates running statistics) and backward
//! passes take the forward input again. Batched kernels map over samples via
//! [`crate::exec`] and sum parameter gradients in sample order.

mod chain;
mod layers;
mod optim;
mod tensor;

pub use chain::{Chain, ChainTape, Stage};
pub use layers::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward, Backprop,
    BatchNorm2d, BnCache, Conv2d, ConvGeom, ConvTranspose2d, Init, Linear, Param,
};
pub use optim::{zero_grads, Adam, AdamConfig};
pub use tensor::{gemm, Tensor};

/// Negative slope used by every leaky rectifier in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;
