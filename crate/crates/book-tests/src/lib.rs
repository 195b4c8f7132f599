//! Compiles and runs the Rust listings of the guide in `book/` as doctests,
//! one module per chapter so a failure points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/sensing.md")]
pub mod sensing {}
#[doc = include_str!("../../../book/src/projection.md")]
pub mod projection {}
#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("../../../book/src/scan.md")]
pub mod scan {}
#[doc = include_str!("../../../book/src/denoiser.md")]
pub mod denoiser {}
#[doc = include_str!("../../../book/src/unfolding.md")]
pub mod unfolding {}
#[doc = include_str!("../../../book/src/metrics_io.md")]
pub mod metrics_io {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
