//! Selective state-space kernel: input-dependent parameters, zero-order-hold
//! discretisation, sequential and parallel scans, and four-way 2-D traversal.

pub mod bench;
pub mod cross;
pub mod kernel;
pub mod ops;
mod params;

pub use cross::{cross_merge, cross_scan, scan_paths, ScanLayout};
pub use kernel::{ScanDims, ScanMode};
pub use ops::{discretize_zoh, selective_scan};
pub use params::{generate_params, ssm_forward, SsmParams};
