//! Minimal dense network engine: row-major `f64` tensors, fully connected
//! layers with ReLU or identity activations, softmax cross-entropy and MSE
//! losses, and manual backpropagation over sequential stacks.
//!
//! Batch gradients are returned as sums over samples. Callers that need
//! per-sample averaging (the federated clients) normalise themselves.

mod layer;
mod loss;
mod optim;
mod tensor;

pub use layer::{Activation, DenseLayer, ForwardCache, GradientSet, LayerTensors, Sequential};
pub use loss::{mse, softmax_cross_entropy};
pub use optim::{sgd_step, Adam};
pub use tensor::Tensor;
