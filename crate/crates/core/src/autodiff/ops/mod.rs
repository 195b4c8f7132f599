//! Differentiable primitives. Each one is a method on [`Tensor`](super::Tensor)
//! and registers its adjoint when any operand requires grad.

pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod norm;
pub mod shape;

pub use elementwise::broadcast_shape;
