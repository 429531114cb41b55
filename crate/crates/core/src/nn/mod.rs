//! A small dense-network engine: affine layers with SeLU/ReLU/identity
//! activations, reverse-mode gradients, Adam/SGD updates and inverted
//! dropout. Sized for the shallow, narrow networks used here.

mod activation;
pub mod checkpoint;
mod dropout;
mod net;
mod optim;

pub use activation::{Activation, SELU_ALPHA, SELU_LAMBDA};
pub use checkpoint::{NetCheckpoint, OptimizerCheckpoint};
pub use dropout::DropoutMask;
pub use net::{init_net, DenseNet, GradientTape, Gradients, Layer};
pub use optim::{adam_step, OptimizerKind, OptimizerState};
