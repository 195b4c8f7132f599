//! Dense tensors with reverse-mode automatic differentiation.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, Record};
pub use ops::norm::LAYERNORM_EPS;
pub use optim::Adam;
pub use tensor::{set_adjoint_fault, BackwardOp, Tensor};
