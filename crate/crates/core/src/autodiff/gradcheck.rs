//! Central finite-difference gradient checking (float64 only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Step and pass thresholds for [`check_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    pub const fn new(step: f64, rtol: f64, atol: f64) -> Self {
        Tolerance { step, rtol, atol }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(1e-5, 1e-4, 1e-8)
    }
}

/// Relative error with the denominator floored at `atol / rtol`, so an
/// element passes iff `|a - n| <= max(rtol * max(|a|, |n|), atol)`.
pub fn relative_error(analytic: f64, numeric: f64, tol: &Tolerance) -> f64 {
    let diff = (analytic - numeric).abs();
    let den = analytic.abs().max(numeric.abs()).max(tol.atol / tol.rtol);
    diff / den
}

#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: &Tolerance) -> bool {
        self.max_rel_err() <= tol.rtol
    }
}

/// Compares backpropagated gradients of the scalar produced by `f` against
/// central differences, perturbing the values of `params` in place.
///
/// `f` must rebuild its graph from the current parameter values on every
/// call. With `max_per_param`, only that many seeded-random entries of each
/// parameter are perturbed.
pub fn check_gradients<F>(
    params: &[Tensor<f64>],
    f: F,
    tol: &Tolerance,
    max_per_param: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for p in params {
        p.zero_grad();
    }
    let root = f()?;
    if root.numel() != 1 {
        return Err(Error::NonScalarRoot(root.shape().to_vec()));
    }
    root.backward()?;
    drop(root);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let n = p.numel();
        let picks: Vec<usize> = match max_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &i in &picks {
            let orig = p.data()[i];
            p.data_mut()[i] = orig + tol.step;
            let fp = f()?.item();
            p.data_mut()[i] = orig - tol.step;
            let fm = f()?.item();
            p.data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * tol.step);
            worst = worst.max(relative_error(analytic[i], numeric, tol));
        }
        reports.push(ParamReport {
            name: p.name().map(str::to_owned).unwrap_or_else(|| format!("input{pi}")),
            checked: picks.len(),
            max_rel_err: worst,
        });
        p.zero_grad();
    }
    Ok(GradCheckReport { params: reports })
}
