//! Closed-form data-consistency step.

use crate::autodiff::Tensor;
use crate::cassi::{HsiCube, Measurement, SensingOperator};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Constant tensors describing `Ψ` for differentiable use.
#[derive(Clone, Debug)]
pub struct OperatorTensors<S: Scalar> {
    /// Sheared mask stack, `H × W* × N`.
    pub mask: Tensor<S>,
    /// `ψ`, `H × W* × 1`.
    pub psi: Tensor<S>,
    pub shift: usize,
    pub width: usize,
}

impl<S: Scalar> OperatorTensors<S> {
    pub fn new(op: &SensingOperator) -> Result<Self> {
        let m = op.shifted_mask();
        let conv = |v: &[f64]| v.iter().map(|&x| S::from_f64(x)).collect::<Vec<S>>();
        Ok(OperatorTensors {
            mask: Tensor::from_vec(conv(&m.values), &[m.height, m.width, m.bands])?,
            psi: Tensor::from_vec(conv(op.psi_diag()), &[m.height, m.width, 1])?,
            shift: op.shift(),
            width: op.width(),
        })
    }

    pub fn bands(&self) -> usize {
        self.mask.dim(2)
    }

    /// `Ψ z`, `H × W* × 1`.
    pub fn project(&self, z: &Tensor<S>) -> Result<Tensor<S>> {
        z.mul(&self.mask)?.sum_axes(&[2], true)
    }

    /// `Ψᵀ r` for `r: H × W* × 1`.
    pub fn adjoint(&self, r: &Tensor<S>) -> Result<Tensor<S>> {
        self.mask.mul(r)
    }

    /// Crops band `ω` of a sheared volume back to the scene grid,
    /// `H × W* × N → H × W × N`.
    pub fn unshift(&self, v: &Tensor<S>) -> Result<Tensor<S>> {
        let bands: Vec<Tensor<S>> =
            (0..self.bands()).map(|b| v.slice(2, b, 1)?.slice(1, b * self.shift, self.width)).collect::<Result<_>>()?;
        Tensor::concat(&bands, 2)
    }
}

pub fn measurement_tensor<S: Scalar>(y: &Measurement) -> Result<Tensor<S>> {
    Tensor::from_vec(y.values.iter().map(|&v| S::from_f64(v)).collect(), &[y.height, y.width, 1])
}

/// `X = Z + Ψᵀ((y − Ψ Z) ⊘ (η + ψ))`, differentiable in `z` and `eta`
/// (single element).
pub fn data_projection<S: Scalar>(
    z: &Tensor<S>,
    op: &OperatorTensors<S>,
    y: &Tensor<S>,
    eta: &Tensor<S>,
) -> Result<Tensor<S>> {
    if z.shape() != op.mask.shape() {
        return Err(Error::shape("data_projection", z.shape(), op.mask.shape()));
    }
    if eta.numel() != 1 || !(eta.item() > S::zero()) {
        return Err(Error::invalid("data_projection", "η must be a single positive value"));
    }
    let residual = y.sub(&op.project(z)?)?;
    let scaled = residual.div(&op.psi.add(&eta.reshape(&[1, 1, 1])?)?)?;
    z.add(&op.adjoint(&scaled)?)
}

/// Plain `f64` version of [`data_projection`] on sheared volumes.
pub fn data_projection_f64(op: &SensingOperator, z: &HsiCube, y: &Measurement, eta: f64) -> Result<HsiCube> {
    if !(eta > 0.0) {
        return Err(Error::invalid("data_projection", format!("η = {eta} must be positive")));
    }
    let pz = op.forward_project(z)?;
    if (y.height, y.width) != (pz.height, pz.width) {
        return Err(Error::shape("data_projection", &[y.height, y.width], &[pz.height, pz.width]));
    }
    let scaled = Measurement {
        values: y
            .values
            .iter()
            .zip(&pz.values)
            .zip(op.psi_diag())
            .map(|((&yv, &p), &psi)| (yv - p) / (eta + psi))
            .collect(),
        ..pz
    };
    let mut x = op.adjoint_project(&scaled)?;
    x.values.iter_mut().zip(&z.values).for_each(|(a, &b)| *a += b);
    Ok(x)
}

/// Mean of `sqrt(d² + ε²) − ε` over all entries of `a − b`.
pub fn charbonnier_loss<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("charbonnier_loss", a.shape(), b.shape()));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("charbonnier_loss", "ε must be positive"));
    }
    a.sub(b)?.square()?.shift(eps * eps).sqrt().mean_all().map(|m| m.shift(-eps))
}

/// Default Charbonnier `ε`.
pub const CHARBONNIER_EPS: f64 = 1e-3;
