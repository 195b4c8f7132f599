//! Parameter initialisers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Normal samples with standard deviation `std`, redrawn until they fall
/// within two standard deviations.
pub fn trunc_normal<S: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64, name: &str) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std.max(f64::MIN_POSITIVE)).expect("finite std");
    let values = (0..n)
        .map(|_| loop {
            let v: f64 = dist.sample(rng);
            if v.abs() <= 2.0 * std {
                break S::from_f64(v);
            }
        })
        .collect();
    Tensor::parameter(values, shape, name)
}

pub fn constant<S: Scalar>(shape: &[usize], value: f64, name: &str) -> Result<Tensor<S>> {
    Tensor::parameter(vec![S::from_f64(value); shape.iter().product()], shape, name)
}
