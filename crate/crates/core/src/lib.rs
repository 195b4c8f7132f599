//! Snapshot spectral compressive imaging reconstruction by deep unfolding.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: dense tensors with reverse-mode differentiation, Adam and
//!   the `DHMW` checkpoint format.
//! * [`cassi`]: the coded-aperture forward model, its adjoint and the
//!   diagonal of `Ψ Ψᵀ`.
//! * [`ssm`]: the selective state-space kernel (parameter generation, ZOH
//!   discretisation, sequential and parallel scans, four-way cross scan).
//! * [`network`]: the dual state-space denoiser built from those pieces.
//! * [`unfolding`]: the half-quadratic-splitting stage loop, the parameter
//!   learner, the Charbonnier objective and training.
//! * [`gradsuite`]: the finite-difference checks run by `dhm gradcheck`.
//! * [`metrics`], [`dataset`], [`io`], [`config`]: evaluation and glue.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cassi;
pub mod config;
pub mod dataset;
mod error;
pub mod gradsuite;
pub mod io;
pub mod metrics;
pub mod network;
pub mod scalar;
pub mod ssm;
pub mod unfolding;

pub use autodiff::Tensor;
pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
