use rayon::prelude::*;

use crate::autodiff::tensor::{BackwardOp, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row count above which the row loop is handed to rayon.
const PAR_ROWS: usize = 256;

/// `out[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn gemm<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    let row = |(i, out_row): (usize, &mut [S])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if m >= PAR_ROWS && n > 0 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else if n > 0 {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

/// `out[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
fn gemm_tn<S: Scalar>(a: &[S], g: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let o = &mut out[p * n..(p + 1) * n];
            for (x, &gv) in o.iter_mut().zip(g_row) {
                *x += av * gv;
            }
        }
    }
}

/// `out[m×k] += g · bᵀ` where `g` is `m×n` and `b` is `k×n`.
fn gemm_nt<S: Scalar>(g: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    let row = |(i, out_row): (usize, &mut [S])| {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            *o += g_row.iter().zip(b_row).map(|(&x, &y)| x * y).sum::<S>();
        }
    };
    if m >= PAR_ROWS && k > 0 {
        out.par_chunks_mut(k).enumerate().for_each(row);
    } else if k > 0 {
        out.chunks_mut(k).enumerate().for_each(row);
    }
}

struct Matmul;

impl<S: Scalar> BackwardOp<S> for Matmul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, parents: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let (a, b) = (&parents[0], &parents[1]);
        let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
        let ga = a.requires_grad().then(|| {
            let mut g = vec![S::zero(); m * k];
            gemm_nt(grad, &b.data(), &mut g, m, k, n);
            g
        });
        let gb = b.requires_grad().then(|| {
            let mut g = vec![S::zero(); k * n];
            gemm_tn(&a.data(), grad, &mut g, m, k, n);
            g
        });
        Ok(vec![ga, gb])
    }
}

impl<S: Scalar> Tensor<S> {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        if self.rank() != 2 || rhs.rank() != 2 || self.dim(1) != rhs.dim(0) {
            return Err(Error::shape("matmul", self.shape(), rhs.shape()));
        }
        let (m, k, n) = (self.dim(0), self.dim(1), rhs.dim(1));
        let mut out = vec![S::zero(); m * n];
        gemm(&self.data(), &rhs.data(), &mut out, m, k, n);
        Ok(Tensor::from_op(out, vec![m, n], vec![self.clone(), rhs.clone()], Matmul))
    }
}
