//! From-scratch conv-conv-dense network with a softplus rate output,
//! Poisson objective, analytic gradients and Adam.

pub mod adam;
pub mod gradcheck;
pub mod model;
pub mod network;
pub mod ops;
pub mod tensor;

pub use adam::{AdamConfig, TrainState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{Architecture, CnnModel};
pub use network::{backward, batch_gradient, forward, poisson_objective, ForwardCache, Regularization};
pub use ops::{conv2d_valid, relu, sigmoid, softplus};
pub use tensor::Tensor;
