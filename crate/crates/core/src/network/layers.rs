//! Parameterised building blocks on `[H, W, C]` feature maps.

use rand::Rng;

use crate::autodiff::init::{constant, trunc_normal};
use crate::autodiff::{Tensor, LAYERNORM_EPS};
use crate::error::Result;
use crate::scalar::Scalar;

/// Std used for the linear projections.
pub const PROJ_STD: f64 = 0.02;

/// Per-pixel affine map over the last axis: `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, name: &str) -> Result<Self> {
        Self::with_std(rng, fan_in, fan_out, PROJ_STD, name)
    }

    pub fn with_std<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, std: f64, name: &str) -> Result<Self> {
        Ok(Linear {
            weight: trunc_normal(rng, &[fan_in, fan_out], std, &format!("{name}.w"))?,
            bias: constant(&[fan_out], 0.0, &format!("{name}.b"))?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = x.shape().to_vec();
        let fan_in = *shape.last().unwrap_or(&0);
        let rows = x.numel() / fan_in.max(1);
        let y = x.reshape(&[rows, fan_in])?.matmul(&self.weight)?.add(&self.bias)?;
        let mut out = shape;
        *out.last_mut().expect("rank ≥ 1") = self.weight.dim(1);
        y.reshape(&out)
    }

    pub fn params(&self, out: &mut Vec<Tensor<S>>) {
        out.extend([self.weight.clone(), self.bias.clone()]);
    }
}

/// Dense 2-D convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub stride: usize,
    pub padding: usize,
}

impl<S: Scalar> Conv<S> {
    /// Truncated-normal weights with std `1/sqrt(fan_in)`.
    pub fn new<R: Rng>(
        rng: &mut R,
        kernel: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: usize,
        name: &str,
    ) -> Result<Self> {
        let std = 1.0 / ((kernel * kernel * cin) as f64).sqrt();
        Ok(Conv {
            weight: trunc_normal(rng, &[kernel, kernel, cin, cout], std, &format!("{name}.w"))?,
            bias: constant(&[cout], 0.0, &format!("{name}.b"))?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.conv2d(&self.weight, self.stride, self.padding)?.add(&self.bias)
    }

    pub fn params(&self, out: &mut Vec<Tensor<S>>) {
        out.extend([self.weight.clone(), self.bias.clone()]);
    }
}

/// Transposed convolution with bias, used for upsampling.
#[derive(Clone, Debug)]
pub struct ConvTranspose<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub stride: usize,
}

impl<S: Scalar> ConvTranspose<S> {
    pub fn new<R: Rng>(rng: &mut R, kernel: usize, cin: usize, cout: usize, stride: usize, name: &str) -> Result<Self> {
        let std = 1.0 / ((kernel * kernel * cin) as f64 / (stride * stride) as f64).sqrt();
        Ok(ConvTranspose {
            weight: trunc_normal(rng, &[kernel, kernel, cin, cout], std, &format!("{name}.w"))?,
            bias: constant(&[cout], 0.0, &format!("{name}.b"))?,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.transposed_conv2d(&self.weight, self.stride, 0)?.add(&self.bias)
    }

    pub fn params(&self, out: &mut Vec<Tensor<S>>) {
        out.extend([self.weight.clone(), self.bias.clone()]);
    }
}

/// 3×3 depthwise convolution with bias.
#[derive(Clone, Debug)]
pub struct DepthwiseConv<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> DepthwiseConv<S> {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, name: &str) -> Result<Self> {
        Ok(DepthwiseConv {
            weight: trunc_normal(rng, &[3, 3, channels], 1.0 / 3.0, &format!("{name}.w"))?,
            bias: constant(&[channels], 0.0, &format!("{name}.b"))?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.depthwise_conv2d(&self.weight, 1)?.add(&self.bias)
    }

    pub fn params(&self, out: &mut Vec<Tensor<S>>) {
        out.extend([self.weight.clone(), self.bias.clone()]);
    }
}

/// Layer norm over channels with a learnable affine map (identity at init).
#[derive(Clone, Debug)]
pub struct LayerNorm<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

impl<S: Scalar> LayerNorm<S> {
    pub fn new(channels: usize, name: &str) -> Result<Self> {
        Ok(LayerNorm {
            gamma: constant(&[channels], 1.0, &format!("{name}.gamma"))?,
            beta: constant(&[channels], 0.0, &format!("{name}.beta"))?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        x.layernorm(LAYERNORM_EPS)?.mul(&self.gamma)?.add(&self.beta)
    }

    pub fn params(&self, out: &mut Vec<Tensor<S>>) {
        out.extend([self.gamma.clone(), self.beta.clone()]);
    }
}
