use crate::autodiff::ops::elementwise::{broadcast_shape, layout, reduce_to};
use crate::autodiff::tensor::{numel, BackwardOp, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

struct Reshape;

impl<S: Scalar> BackwardOp<S> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        Ok(vec![Some(grad.to_vec())])
    }
}

struct Permute {
    axes: Vec<usize>,
}

/// Gathers `src` (of shape `shape`) into the axis order `axes`.
fn permute_buffer<S: Scalar>(src: &[S], shape: &[usize], axes: &[usize]) -> Vec<S> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let mut index = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(src[off]);
        for ax in (0..rank).rev() {
            index[ax] += 1;
            off += strides[ax];
            if index[ax] < out_shape[ax] {
                break;
            }
            off -= strides[ax] * index[ax];
            index[ax] = 0;
        }
    }
    out
}

impl<S: Scalar> BackwardOp<S> for Permute {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, _: &[Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let mut inverse = vec![0; self.axes.len()];
        for (i, &a) in self.axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(vec![Some(permute_buffer(grad, output.shape(), &inverse))])
    }
}

struct Concat {
    axis: usize,
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel(&shape[..axis]), numel(&shape[axis + 1..]))
}

impl<S: Scalar> BackwardOp<S> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, parents: &[Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let (outer, inner) = outer_inner(output.shape(), self.axis);
        let total = output.dim(self.axis);
        let mut start = 0;
        let mut grads = Vec::with_capacity(parents.len());
        for p in parents {
            let extent = p.dim(self.axis);
            if p.requires_grad() {
                let mut g = Vec::with_capacity(p.numel());
                for o in 0..outer {
                    let base = (o * total + start) * inner;
                    g.extend_from_slice(&grad[base..base + extent * inner]);
                }
                grads.push(Some(g));
            } else {
                grads.push(None);
            }
            start += extent;
        }
        Ok(grads)
    }
}

struct Slice {
    axis: usize,
    start: usize,
}

impl<S: Scalar> BackwardOp<S> for Slice {
    fn name(&self) -> &'static str {
        "slice"
    }

    fn backward(&self, parents: &[Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let src = &parents[0];
        let (outer, inner) = outer_inner(src.shape(), self.axis);
        let total = src.dim(self.axis);
        let len = output.dim(self.axis);
        let mut g = vec![S::zero(); src.numel()];
        for o in 0..outer {
            let dst = (o * total + self.start) * inner;
            let from = o * len * inner;
            g[dst..dst + len * inner].copy_from_slice(&grad[from..from + len * inner]);
        }
        Ok(vec![Some(g)])
    }
}

struct BroadcastTo;

impl<S: Scalar> BackwardOp<S> for BroadcastTo {
    fn name(&self) -> &'static str {
        "broadcast"
    }

    fn backward(&self, parents: &[Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let l = layout(parents[0].shape(), output.shape());
        Ok(vec![Some(reduce_to(grad.iter().copied(), &l, parents[0].numel()))])
    }
}

struct SumAxes {
    keep_shape: Vec<usize>,
    scale: f64,
    mean: bool,
}

impl<S: Scalar> BackwardOp<S> for SumAxes {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn backward(&self, parents: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let l = layout(&self.keep_shape, parents[0].shape());
        let s = S::from_f64(self.scale);
        let g = (0..parents[0].numel()).map(|i| grad[l.at(i)] * s).collect();
        Ok(vec![Some(g)])
    }
}

struct IndexSelect {
    indices: Vec<usize>,
}

impl<S: Scalar> BackwardOp<S> for IndexSelect {
    fn name(&self) -> &'static str {
        "index_select"
    }

    fn backward(&self, parents: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let src = &parents[0];
        let row = src.numel() / src.dim(0);
        let mut g = vec![S::zero(); src.numel()];
        for (k, &i) in self.indices.iter().enumerate() {
            let dst = &mut g[i * row..(i + 1) * row];
            for (d, &v) in dst.iter_mut().zip(&grad[k * row..(k + 1) * row]) {
                *d += v;
            }
        }
        Ok(vec![Some(g)])
    }
}

impl<S: Scalar> Tensor<S> {
    /// Same buffer under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], Reshape))
    }

    /// Reorders axes so that output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<S>> {
        let mut seen = vec![false; self.rank()];
        if axes.len() != self.rank() || axes.iter().any(|&a| a >= self.rank() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::invalid("permute", format!("{axes:?} is not a permutation of rank {}", self.rank())));
        }
        let data = permute_buffer(&self.data(), self.shape(), axes);
        let shape = axes.iter().map(|&a| self.dim(a)).collect();
        Ok(Tensor::from_op(data, shape, vec![self.clone()], Permute { axes: axes.to_vec() }))
    }

    pub fn concat(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for rank {}", first.rank())));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for p in parts {
            let compatible = p.rank() == first.rank() && (0..p.rank()).all(|a| a == axis || p.dim(a) == first.dim(a));
            if !compatible {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
            shape[axis] += p.dim(axis);
        }
        let (outer, _) = outer_inner(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let (_, inner) = outer_inner(p.shape(), axis);
                let chunk = p.dim(axis) * inner;
                data.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor::from_op(data, shape, parts.to_vec(), Concat { axis }))
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
        if axis >= self.rank() || start + len > self.dim(axis) {
            return Err(Error::invalid(
                "slice",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let (outer, inner) = outer_inner(self.shape(), axis);
        let total = self.dim(axis);
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(data, shape, vec![self.clone()], Slice { axis, start }))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<S>> {
        let out = broadcast_shape(self.shape(), shape)?;
        if out != shape {
            return Err(Error::Broadcast { lhs: self.shape().to_vec(), rhs: shape.to_vec() });
        }
        let l = layout(self.shape(), shape);
        let src = self.data();
        let data = (0..numel(shape)).map(|i| src[l.at(i)]).collect();
        drop(src);
        Ok(Tensor::from_op(data, shape.to_vec(), vec![self.clone()], BroadcastTo))
    }

    fn reduce(&self, axes: &[usize], keepdim: bool, mean: bool) -> Result<Tensor<S>> {
        if axes.iter().any(|&a| a >= self.rank()) {
            return Err(Error::invalid("sum", format!("axes {axes:?} for rank {}", self.rank())));
        }
        let mut keep_shape = self.shape().to_vec();
        for &a in axes {
            keep_shape[a] = 1;
        }
        let count = self.numel() / numel(&keep_shape).max(1);
        let l = layout(&keep_shape, self.shape());
        let mut data = vec![S::zero(); numel(&keep_shape)];
        for (i, &v) in self.data().iter().enumerate() {
            data[l.at(i)] += v;
        }
        let scale = if mean { 1.0 / count as f64 } else { 1.0 };
        if mean {
            let s = S::from_f64(scale);
            data.iter_mut().for_each(|v| *v *= s);
        }
        let shape = if keepdim {
            keep_shape.clone()
        } else {
            let reduced: Vec<usize> = (0..self.rank()).filter(|a| !axes.contains(a)).map(|a| self.dim(a)).collect();
            if reduced.is_empty() {
                vec![1]
            } else {
                reduced
            }
        };
        Ok(Tensor::from_op(data, shape, vec![self.clone()], SumAxes { keep_shape, scale, mean }))
    }

    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<S>> {
        self.reduce(axes, keepdim, false)
    }

    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<S>> {
        self.reduce(axes, keepdim, true)
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum_all(&self) -> Result<Tensor<S>> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce(&axes, false, false)
    }

    pub fn mean_all(&self) -> Result<Tensor<S>> {
        let axes: Vec<usize> = (0..self.rank()).collect();
        self.reduce(&axes, false, true)
    }

    /// Rows of the leading axis, in the order given by `indices`.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor<S>> {
        let rows = self.dim(0);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid("index_select", format!("index {bad} >= {rows}")));
        }
        let row = self.numel() / rows.max(1);
        let src = self.data();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        drop(src);
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        Ok(Tensor::from_op(data, shape, vec![self.clone()], IndexSelect { indices: indices.to_vec() }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: &[usize]) -> Tensor<f64> {
        Tensor::from_vec((0..numel(shape)).map(|i| i as f64).collect(), shape).unwrap()
    }

    #[test]
    fn permute_transposes() {
        let t = iota(&[2, 3]).permute(&[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(iota(&[2, 3]).permute(&[0, 0]).is_err());
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let a = iota(&[2, 2, 3]);
        let b = iota(&[2, 2, 1]);
        let c = Tensor::concat(&[a.clone(), b.clone()], 2).unwrap();
        assert_eq!(c.shape(), &[2, 2, 4]);
        assert_eq!(c.slice(2, 0, 3).unwrap().to_vec(), a.to_vec());
        assert_eq!(c.slice(2, 3, 1).unwrap().to_vec(), b.to_vec());
        assert!(c.slice(2, 3, 2).is_err());
    }

    #[test]
    fn reductions() {
        let t = iota(&[2, 3]);
        assert_eq!(t.sum_axes(&[0], false).unwrap().to_vec(), vec![3.0, 5.0, 7.0]);
        assert_eq!(t.mean_axes(&[1], true).unwrap().shape(), &[2, 1]);
        assert_eq!(t.mean_axes(&[1], true).unwrap().to_vec(), vec![1.0, 4.0]);
        assert_eq!(t.sum_all().unwrap().item(), 15.0);
    }

    #[test]
    fn sum_backward_is_ones() {
        let x = Tensor::parameter(vec![0.5; 12], &[3, 4], "x").unwrap();
        x.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 12]);
    }

    #[test]
    fn index_select_backward_scatters() {
        let x = Tensor::parameter(vec![1.0, 2.0, 3.0], &[3, 1], "x").unwrap();
        let y = x.index_select(&[2, 2, 0]).unwrap();
        assert_eq!(y.to_vec(), vec![3.0, 3.0, 1.0]);
        y.sum_all().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 2.0]);
    }
}
