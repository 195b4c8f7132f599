//! The dual state-space denoiser and its building blocks.

mod blocks;
mod dhm;
pub mod layers;

pub use blocks::{Dhsb, Gffn, Hsb};
pub use dhm::Dhm;
