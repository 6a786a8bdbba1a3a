//! Minimal dense-network numerics: parameter containers, forward/backward
//! passes, losses, optimizers, and a finite-difference gradient oracle.

mod linear;
mod loss;
mod mlp;
mod optim;
mod qfunction;

pub use linear::LinearTransform;
pub use loss::huber_loss;
pub use mlp::{GradientBuffer, Mlp};
pub use optim::{Optimizer, OptimizerKind};
pub use qfunction::{gradient_check, softmax, QFunction, FD_STEP};
