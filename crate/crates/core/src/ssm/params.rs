use rand::Rng;

use super::kernel::ScanMode;
use super::ops::{discretize_zoh, selective_scan};
use crate::autodiff::init::{constant, trunc_normal};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Learnable state-space parameters for one scan direction.
///
/// `A = −exp(log_a)` keeps the continuous dynamics strictly stable. The
/// timescale bias `e` holds one value per channel and is broadcast over
/// every group and position, so a block works on any image size.
#[derive(Clone, Debug)]
pub struct SsmParams<S: Scalar> {
    pub log_a: Tensor<S>,
    pub e: Tensor<S>,
    pub nu: Tensor<S>,
    pub p_b: Tensor<S>,
    pub p_c: Tensor<S>,
    pub p_delta: Tensor<S>,
}

impl<S: Scalar> SsmParams<S> {
    /// `A` rows are log-spaced over `[−1, −1e-2]`; `e` is the inverse
    /// softplus of a log-uniform timescale in `[1e-3, 1e-1]`; `ν = 1`.
    pub fn init<R: Rng>(rng: &mut R, channels: usize, state: usize, prefix: &str) -> Result<Self> {
        let log_a: Vec<S> = (0..channels * state)
            .map(|i| {
                let s = i % state;
                let t = if state > 1 { s as f64 / (state - 1) as f64 } else { 0.0 };
                S::from_f64((1e-2f64).ln() * (1.0 - t))
            })
            .collect();
        let e: Vec<S> = (0..channels)
            .map(|_| {
                let dt = (rng.random_range((1e-3f64).ln()..(1e-1f64).ln())).exp();
                S::from_f64(dt + (-(-dt).exp_m1()).ln())
            })
            .collect();
        Ok(SsmParams {
            log_a: Tensor::parameter(log_a, &[channels, state], format!("{prefix}.log_a"))?,
            e: Tensor::parameter(e, &[channels], format!("{prefix}.e"))?,
            nu: constant(&[channels], 1.0, &format!("{prefix}.nu"))?,
            p_b: trunc_normal(rng, &[channels, state], 0.02, &format!("{prefix}.p_b"))?,
            p_c: trunc_normal(rng, &[channels, state], 0.02, &format!("{prefix}.p_c"))?,
            p_delta: trunc_normal(rng, &[channels, channels], 0.02, &format!("{prefix}.p_delta"))?,
        })
    }

    pub fn channels(&self) -> usize {
        self.log_a.dim(0)
    }

    pub fn state(&self) -> usize {
        self.log_a.dim(1)
    }

    pub fn a(&self) -> Tensor<S> {
        self.log_a.exp().neg()
    }

    pub fn tensors(&self) -> Vec<Tensor<S>> {
        vec![
            self.log_a.clone(),
            self.e.clone(),
            self.nu.clone(),
            self.p_b.clone(),
            self.p_c.clone(),
            self.p_delta.clone(),
        ]
    }
}

/// Input-dependent `B`, `C` (`G × L × Ds`) and `Δ` (`G × L × D`) for a
/// sequence batch `s: G × L × D`.
pub fn generate_params<S: Scalar>(s: &Tensor<S>, p: &SsmParams<S>) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    if s.rank() != 3 || s.dim(2) != p.channels() {
        return Err(Error::shape("generate_params", s.shape(), p.log_a.shape()));
    }
    let (g, l, d) = (s.dim(0), s.dim(1), s.dim(2));
    let ds = p.state();
    let flat = s.reshape(&[g * l, d])?;
    let b = flat.matmul(&p.p_b)?.reshape(&[g, l, ds])?;
    let c = flat.matmul(&p.p_c)?.reshape(&[g, l, ds])?;
    let delta = flat.matmul(&p.p_delta)?.add(&p.e)?.softplus().reshape(&[g, l, d])?;
    Ok((b, c, delta))
}

/// Full state-space pass: parameter generation, discretisation and scan.
pub fn ssm_forward<S: Scalar>(s: &Tensor<S>, p: &SsmParams<S>, mode: ScanMode) -> Result<Tensor<S>> {
    let (b, c, delta) = generate_params(s, p)?;
    let (a_bar, b_bar) = discretize_zoh(&p.a(), &b, &delta)?;
    selective_scan(s, &a_bar, &b_bar, &c, &p.nu, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = SsmParams::<f64>::init(&mut rng, 3, 4, "ssm").unwrap();
        let a = p.a().to_vec();
        assert!(a.iter().all(|&v| (-1.0 - 1e-12..=-1e-2 + 1e-12).contains(&v)));
        assert!((a[0] + 1e-2).abs() < 1e-12 && (a[3] + 1.0).abs() < 1e-12);
        for &e in p.e.data().iter() {
            let dt = crate::autodiff::ops::elementwise::softplus_f64(e);
            assert!((1e-3 - 1e-12..=1e-1 + 1e-12).contains(&dt), "{dt}");
        }
    }

    #[test]
    fn zero_input_gives_ln2_timescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SsmParams::<f64>::init(&mut rng, 2, 3, "ssm").unwrap();
        p.e.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let (b, _, delta) = generate_params(&Tensor::zeros(&[1, 5, 2]), &p).unwrap();
        assert!(delta.data().iter().all(|&v| (v - std::f64::consts::LN_2).abs() < 1e-15));
        assert!(b.data().iter().all(|&v| v == 0.0));
    }
}
