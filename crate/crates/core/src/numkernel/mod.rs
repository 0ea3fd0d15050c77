//! Minimal dense numeric kernel: f64 matrices, MLP forward/backward with an
//! analytic gradient-penalty double backward, SGD/Adam, stable softmax, and
//! a deterministic splittable RNG.
//!
//! Everything downstream builds on these pieces; any training loop driven
//! only by [`RngStream`] draws and these kernels is bit-reproducible.

mod mat;
mod mlp;
mod optim;
mod rng;

pub use mat::{axpy, dot, Mat};
pub use mlp::{
    gradient_penalty_batch, input_gradients, log_sum_exp, mlp_backward, mlp_forward,
    penalty_gradients, softmax, Activation, ForwardPass, Layer, MlpGrads, MlpParams,
};
pub use optim::{OptimizerKind, OptimizerState};
pub use rng::{derive_rng, RngStream};
