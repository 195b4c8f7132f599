//! Differentiable wrappers around the discretisation and scan kernels.

use rayon::prelude::*;

use super::kernel::{scan_backward, scan_forward, ScanDims, ScanMode};
use crate::autodiff::{BackwardOp, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// `(e^x - 1) / x`, with its Taylor expansion near zero.
pub fn expm1_ratio<S: Scalar>(x: S) -> S {
    if x.abs() < lit(SERIES_BELOW) {
        ratio_series(x)
    } else {
        x.exp_m1() / x
    }
}

// Σ x^n / (n + 1)!, n = 0..6
fn ratio_series<S: Scalar>(x: S) -> S {
    let mut acc = lit::<S>(1.0 / 5040.0);
    for c in [1.0 / 720.0, 1.0 / 120.0, 1.0 / 24.0, 1.0 / 6.0, 0.5, 1.0] {
        acc = acc * x + lit(c);
    }
    acc
}

// Σ (n + 1) x^n / (n + 2)!, n = 0..6
fn slope_series<S: Scalar>(x: S) -> S {
    let mut acc = lit::<S>(7.0 / 40320.0);
    for c in [6.0 / 5040.0, 5.0 / 720.0, 4.0 / 120.0, 3.0 / 24.0, 2.0 / 6.0, 0.5] {
        acc = acc * x + lit(c);
    }
    acc
}

/// Below this `|x|` the ratio and its slope use their series.
const SERIES_BELOW: f64 = 0.1;

/// `((e^x - 1)/x, d/dx (e^x - 1)/x)` given `e = e^x`; the slope equals
/// `(x e^x - (e^x - 1)) / x²`.
fn zoh_terms<S: Scalar>(x: S, e: S) -> (S, S) {
    if x.abs() < lit(SERIES_BELOW) {
        (ratio_series(x), slope_series(x))
    } else {
        let m = e - S::one();
        (m / x, (x * e - m) / (x * x))
    }
}

struct ZohDims {
    rows: usize, // G·L
    d: usize,
    ds: usize,
}

fn zoh_dims<S: Scalar>(a: &Tensor<S>, delta: &Tensor<S>) -> Result<ZohDims> {
    if a.rank() != 2 || delta.rank() != 3 || delta.dim(2) != a.dim(0) {
        return Err(Error::shape("discretize_zoh", a.shape(), delta.shape()));
    }
    if delta.data().iter().any(|&v| v.partial_cmp(&S::zero()) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::invalid("discretize_zoh", "Δ must be strictly positive"));
    }
    Ok(ZohDims { rows: delta.dim(0) * delta.dim(1), d: a.dim(0), ds: a.dim(1) })
}

struct ZohA;

impl<S: Scalar> BackwardOp<S> for ZohA {
    fn name(&self) -> &'static str {
        "zoh_a"
    }

    fn backward(&self, parents: &[Tensor<S>], out: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let (a, delta) = (&parents[0], &parents[1]);
        let (d, ds) = (a.dim(0), a.dim(1));
        let av = a.data();
        let dv = delta.data();
        let ov = out.data();
        let ga = a.requires_grad().then(|| {
            let mut g = vec![S::zero(); d * ds];
            for (row, dr) in dv.chunks(d).enumerate() {
                for j in 0..d {
                    for s in 0..ds {
                        let i = (row * d + j) * ds + s;
                        g[j * ds + s] += grad[i] * dr[j] * ov[i];
                    }
                }
            }
            g
        });
        let gd = delta.requires_grad().then(|| {
            (0..dv.len())
                .map(|i| {
                    let j = i % d;
                    (0..ds).map(|s| grad[i * ds + s] * av[j * ds + s] * ov[i * ds + s]).sum()
                })
                .collect()
        });
        Ok(vec![ga, gd])
    }
}

/// Keeps `exp(ΔA)` from the forward pass.
struct ZohB<S> {
    decay: Vec<S>,
}

impl<S: Scalar> BackwardOp<S> for ZohB<S> {
    fn name(&self) -> &'static str {
        "zoh_b"
    }

    fn backward(&self, parents: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let (a, b, delta) = (&parents[0], &parents[1], &parents[2]);
        let (d, ds) = (a.dim(0), a.dim(1));
        let av = a.data();
        let bv = b.data();
        let dv = delta.data();
        let rows = dv.len() / d;
        let mut ga = a.requires_grad().then(|| vec![S::zero(); d * ds]);
        let mut gb = b.requires_grad().then(|| vec![S::zero(); rows * ds]);
        let mut gd = delta.requires_grad().then(|| vec![S::zero(); rows * d]);
        for row in 0..rows {
            for j in 0..d {
                let dt = dv[row * d + j];
                for s in 0..ds {
                    let i = (row * d + j) * ds + s;
                    let aa = av[j * ds + s];
                    let x = dt * aa;
                    let bb = bv[row * ds + s];
                    let e = self.decay[i];
                    let (ratio, slope) = zoh_terms(x, e);
                    if let Some(g) = gb.as_mut() {
                        g[row * ds + s] += grad[i] * dt * ratio;
                    }
                    if let Some(g) = gd.as_mut() {
                        g[row * d + j] += grad[i] * bb * e;
                    }
                    if let Some(g) = ga.as_mut() {
                        g[j * ds + s] += grad[i] * bb * dt * dt * slope;
                    }
                }
            }
        }
        Ok(vec![ga, gb, gd])
    }
}

/// Zero-order-hold discretisation.
///
/// `a` is `D × Ds`, `b` is `G × L × Ds` and `delta` is `G × L × D`; both
/// outputs are `G × L × D × Ds` with `Ā = exp(ΔA)` and
/// `B̄ = (exp(ΔA) − 1)/A · B`, the latter evaluated as `Δ · expm1(x)/x · B`
/// with `x = ΔA` so that it stays accurate as `x → 0`.
pub fn discretize_zoh<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, delta: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
    let ZohDims { rows, d, ds } = zoh_dims(a, delta)?;
    if b.rank() != 3 || b.dim(0) * b.dim(1) != rows || b.dim(2) != ds || b.dim(0) != delta.dim(0) {
        return Err(Error::shape("discretize_zoh", b.shape(), delta.shape()));
    }
    let mut shape = delta.shape().to_vec();
    shape.push(ds);
    let mut abar = vec![S::zero(); rows * d * ds];
    let mut bbar = vec![S::zero(); rows * d * ds];
    {
        let (ar, br, dr) = (a.data(), b.data(), delta.data());
        let (av, bv, dv): (&[S], &[S], &[S]) = (&ar, &br, &dr);
        abar.par_chunks_mut(d * ds).zip(bbar.par_chunks_mut(d * ds)).enumerate().with_min_len(64).for_each(
            |(row, (ar, br))| {
                for j in 0..d {
                    let dt = dv[row * d + j];
                    for s in 0..ds {
                        let x = dt * av[j * ds + s];
                        let e = x.exp();
                        let ratio = if x.abs() < lit(SERIES_BELOW) { ratio_series(x) } else { x.exp_m1() / x };
                        ar[j * ds + s] = e;
                        br[j * ds + s] = dt * ratio * bv[row * ds + s];
                    }
                }
            },
        );
    }
    let needs_b = [a, b, delta].iter().any(|t| t.requires_grad());
    let decay = if needs_b { abar.clone() } else { Vec::new() };
    let abar = Tensor::from_op(abar, shape.clone(), vec![a.clone(), delta.clone()], ZohA);
    let bbar = Tensor::from_op(bbar, shape, vec![a.clone(), b.clone(), delta.clone()], ZohB { decay });
    Ok((abar, bbar))
}

struct Scan<S> {
    dims: ScanDims,
    mode: ScanMode,
    states: Vec<S>,
}

impl<S: Scalar> BackwardOp<S> for Scan<S> {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, parents: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let g = scan_backward(
            self.dims,
            &parents[0].data(),
            &parents[1].data(),
            &parents[2].data(),
            &parents[3].data(),
            &parents[4].data(),
            &self.states,
            grad,
            self.mode,
        );
        let keep = |t: &Tensor<S>, v: Vec<S>| t.requires_grad().then_some(v);
        Ok(vec![
            keep(&parents[0], g.u),
            keep(&parents[1], g.a_bar),
            keep(&parents[2], g.b_bar),
            keep(&parents[3], g.c),
            keep(&parents[4], g.nu),
        ])
    }
}

/// Selective scan over `u: G × L × D` with discretised `a_bar`, `b_bar`
/// (`G × L × D × Ds`), readout `c: G × L × Ds` and skip scale `nu: D`.
pub fn selective_scan<S: Scalar>(
    u: &Tensor<S>,
    a_bar: &Tensor<S>,
    b_bar: &Tensor<S>,
    c: &Tensor<S>,
    nu: &Tensor<S>,
    mode: ScanMode,
) -> Result<Tensor<S>> {
    if u.rank() != 3 {
        return Err(Error::shape("selective_scan", u.shape(), a_bar.shape()));
    }
    let (groups, len, channels) = (u.dim(0), u.dim(1), u.dim(2));
    if a_bar.rank() != 4 || a_bar.shape()[..3] != u.shape()[..] {
        return Err(Error::shape("selective_scan", u.shape(), a_bar.shape()));
    }
    let state = a_bar.dim(3);
    if b_bar.shape() != a_bar.shape() {
        return Err(Error::shape("selective_scan", a_bar.shape(), b_bar.shape()));
    }
    if c.shape() != [groups, len, state] {
        return Err(Error::shape("selective_scan", &[groups, len, state], c.shape()));
    }
    if nu.shape() != [channels] {
        return Err(Error::shape("selective_scan", &[channels], nu.shape()));
    }
    let dims = ScanDims { groups, len, channels, state };
    let needs_grad = [u, a_bar, b_bar, c, nu].iter().any(|t| t.requires_grad());
    let (y, h) = scan_forward(dims, &u.data(), &a_bar.data(), &b_bar.data(), &c.data(), &nu.data(), mode, needs_grad);
    Ok(Tensor::from_op(
        y,
        vec![groups, len, channels],
        vec![u.clone(), a_bar.clone(), b_bar.clone(), c.clone(), nu.clone()],
        Scan { dims, mode, states: h.unwrap_or_default() },
    ))
}
