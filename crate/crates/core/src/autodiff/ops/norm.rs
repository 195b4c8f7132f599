use crate::autodiff::tensor::{BackwardOp, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LAYERNORM_EPS: f64 = 1e-5;

struct LayerNorm {
    /// 1 / sqrt(var + eps) per row.
    inv_std: Vec<f64>,
}

impl<S: Scalar> BackwardOp<S> for LayerNorm {
    fn name(&self) -> &'static str {
        "layernorm"
    }

    fn backward(&self, _: &[Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let d = *output.shape().last().unwrap_or(&1);
        let y = output.data();
        let mut gx = vec![S::zero(); grad.len()];
        for (r, &inv) in self.inv_std.iter().enumerate() {
            let g = &grad[r * d..(r + 1) * d];
            let yr = &y[r * d..(r + 1) * d];
            let mg = g.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let mgy = g.iter().zip(yr).map(|(a, b)| a.as_f64() * b.as_f64()).sum::<f64>() / d as f64;
            for ((dst, &gv), &yv) in gx[r * d..(r + 1) * d].iter_mut().zip(g).zip(yr) {
                *dst = S::from_f64(inv * (gv.as_f64() - mg - yv.as_f64() * mgy));
            }
        }
        Ok(vec![Some(gx)])
    }
}

impl<S: Scalar> Tensor<S> {
    /// Normalizes each vector along the last axis to zero mean and unit
    /// variance (biased, floored by `eps`). No affine transform.
    pub fn layernorm(&self, eps: f64) -> Result<Tensor<S>> {
        let d = *self.shape().last().ok_or_else(|| Error::invalid("layernorm", "rank-0 input"))?;
        if d == 0 {
            return Err(Error::invalid("layernorm", "empty last axis"));
        }
        let x = self.data();
        let rows = x.len() / d;
        let mut out = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            out.extend(xr.iter().map(|v| S::from_f64((v.as_f64() - mean) * inv)));
        }
        drop(x);
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], LayerNorm { inv_std }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rows_map_to_zero() {
        let x = Tensor::<f64>::full(&[3, 5], 2.5);
        assert!(x.layernorm(LAYERNORM_EPS).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rows_are_standardized() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0], &[2, 4]).unwrap();
        let y = x.layernorm(0.0).unwrap().to_vec();
        for r in y.chunks(4) {
            let m: f64 = r.iter().sum::<f64>() / 4.0;
            let v: f64 = r.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-14 && (v - 1.0).abs() < 1e-12);
        }
    }
}
