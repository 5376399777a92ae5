//! Deterministic numerical kernels: dense products, small MLPs with exact
//! backward passes and inverted dropout, similarity, and gradient checking.

pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod optim;
pub mod rng;

pub use gradcheck::grad_check;
pub use matrix::{cosine_sim, dot, norm, normalize, DenseMatrix};
pub use mlp::{
    backward_batch, forward_batch, mc_forward, mlp_backward, mlp_forward, sigmoid, Activation,
    ForwardCache, Layer, MlpGrads, MlpParams,
};
pub use optim::{Optimizer, OptimizerKind};
pub use rng::{streams, RngState};
