//! Dense feed-forward networks with analytic backpropagation, SGD/Adam
//! updates and a finite-difference gradient oracle.

mod gradcheck;
mod loss;
mod network;
mod optim;

pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use loss::{accuracy, loss_and_grad, Labels, LossKind};
pub use network::{Activation, DenseNetwork, ForwardTrace, GradientSet, Layer, LayerGrad};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
