use crate::autodiff::tensor::{numel, BackwardOp, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Output shape of a numpy-style broadcast: shapes are aligned on their
/// trailing axes and each pair of extents must be equal or contain a 1.
pub fn broadcast_shape(lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>> {
    let rank = lhs.len().max(rhs.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let l = if i + lhs.len() >= rank { lhs[i + lhs.len() - rank] } else { 1 };
        let r = if i + rhs.len() >= rank { rhs[i + rhs.len() - rank] } else { 1 };
        out[i] = match (l, r) {
            (a, b) if a == b => a,
            (1, b) => b,
            (a, 1) => a,
            _ => return Err(Error::Broadcast { lhs: lhs.to_vec(), rhs: rhs.to_vec() }),
        };
    }
    Ok(out)
}

/// Source offset for every element of `out_shape` when reading a tensor of
/// shape `src` broadcast to it.
fn broadcast_offsets(src: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        strides[i + pad] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let n = numel(out_shape);
    let mut offsets = Vec::with_capacity(n);
    let mut index = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offsets.push(off);
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
    offsets
}

pub(crate) enum Layout {
    Same,
    Scalar,
    /// The operand repeats with the given period (trailing-axis broadcast).
    Periodic(usize),
    General(Vec<usize>),
}

pub(crate) fn layout(src: &[usize], out: &[usize]) -> Layout {
    let n = numel(src);
    if src == out {
        return Layout::Same;
    }
    if n == 1 {
        return Layout::Scalar;
    }
    let pad = out.len() - src.len();
    let mut k = src.len();
    while k > 0 && src[k - 1] == out[k - 1 + pad] {
        k -= 1;
    }
    if src[..k].iter().all(|&e| e == 1) {
        return Layout::Periodic(n);
    }
    Layout::General(broadcast_offsets(src, out))
}

impl Layout {
    #[inline]
    pub(crate) fn at(&self, i: usize) -> usize {
        match self {
            Layout::Same => i,
            Layout::Scalar => 0,
            Layout::Periodic(p) => i % p,
            Layout::General(o) => o[i],
        }
    }
}

/// Sums a gradient of the broadcast shape back onto the operand's shape.
pub(crate) fn reduce_to<S: Scalar>(grad: impl Iterator<Item = S>, layout: &Layout, n: usize) -> Vec<S> {
    match layout {
        Layout::Same => grad.collect(),
        _ => {
            let mut out = vec![S::zero(); n];
            for (i, g) in grad.enumerate() {
                out[layout.at(i)] += g;
            }
            out
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

struct Binary {
    kind: BinaryKind,
}

impl<S: Scalar> BackwardOp<S> for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    fn backward(&self, parents: &[Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let (a, b) = (&parents[0], &parents[1]);
        let la = layout(a.shape(), output.shape());
        let lb = layout(b.shape(), output.shape());
        let ad = a.data();
        let bd = b.data();
        let n = grad.len();
        let ga = a.requires_grad().then(|| {
            let it = (0..n).map(|i| match self.kind {
                BinaryKind::Add | BinaryKind::Sub => grad[i],
                BinaryKind::Mul => grad[i] * bd[lb.at(i)],
                BinaryKind::Div => grad[i] / bd[lb.at(i)],
            });
            reduce_to(it, &la, a.numel())
        });
        let gb = b.requires_grad().then(|| {
            let it = (0..n).map(|i| match self.kind {
                BinaryKind::Add => grad[i],
                BinaryKind::Sub => -grad[i],
                BinaryKind::Mul => grad[i] * ad[la.at(i)],
                BinaryKind::Div => {
                    let bv = bd[lb.at(i)];
                    -grad[i] * ad[la.at(i)] / (bv * bv)
                }
            });
            reduce_to(it, &lb, b.numel())
        });
        Ok(vec![ga, gb])
    }
}

fn binary<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, kind: BinaryKind) -> Result<Tensor<S>> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let la = layout(a.shape(), &shape);
    let lb = layout(b.shape(), &shape);
    let n = numel(&shape);
    let data = {
        let ad = a.data();
        let bd = b.data();
        let f = |x: S, y: S| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        match (&la, &lb) {
            (Layout::Same, Layout::Same) => ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..n).map(|i| f(ad[la.at(i)], bd[lb.at(i)])).collect(),
        }
    };
    Ok(Tensor::from_op(data, shape, vec![a.clone(), b.clone()], Binary { kind }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum UnaryKind {
    Neg,
    Exp,
    Sqrt,
    Softplus,
    Sigmoid,
    Silu,
    Gelu,
    Scale(f64),
    Shift(f64),
}

struct Unary {
    kind: UnaryKind,
}

#[inline]
pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus_f64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

impl UnaryKind {
    fn eval<S: Scalar>(self, x: S) -> S {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Exp => x.exp(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Softplus => S::from_f64(softplus_f64(x.as_f64())),
            UnaryKind::Sigmoid => S::from_f64(sigmoid_f64(x.as_f64())),
            UnaryKind::Silu => {
                let xf = x.as_f64();
                S::from_f64(xf * sigmoid_f64(xf))
            }
            UnaryKind::Gelu => {
                let xf = x.as_f64();
                S::from_f64(xf * std_normal_cdf(xf))
            }
            UnaryKind::Scale(c) => x * lit(c),
            UnaryKind::Shift(c) => x + lit(c),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            UnaryKind::Neg => -S::one(),
            UnaryKind::Exp => y,
            UnaryKind::Sqrt => lit::<S>(0.5) / y,
            UnaryKind::Softplus => S::from_f64(sigmoid_f64(x.as_f64())),
            UnaryKind::Sigmoid => y * (S::one() - y),
            UnaryKind::Silu => {
                let xf = x.as_f64();
                let s = sigmoid_f64(xf);
                S::from_f64(s * (1.0 + xf * (1.0 - s)))
            }
            UnaryKind::Gelu => {
                let xf = x.as_f64();
                S::from_f64(std_normal_cdf(xf) + xf * FRAC_1_SQRT_2PI * (-0.5 * xf * xf).exp())
            }
            UnaryKind::Scale(c) => lit(c),
            UnaryKind::Shift(_) => S::one(),
        }
    }
}

impl<S: Scalar> BackwardOp<S> for Unary {
    fn name(&self) -> &'static str {
        match self.kind {
            UnaryKind::Neg => "neg",
            UnaryKind::Exp => "exp",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Silu => "silu",
            UnaryKind::Gelu => "gelu",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::Shift(_) => "shift",
        }
    }

    fn backward(&self, parents: &[Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let x = parents[0].data();
        let y = output.data();
        let g = grad.iter().zip(x.iter().zip(y.iter())).map(|(&g, (&x, &y))| g * self.kind.derivative(x, y)).collect();
        Ok(vec![Some(g)])
    }
}

fn unary<S: Scalar>(a: &Tensor<S>, kind: UnaryKind) -> Tensor<S> {
    let data = a.data().iter().map(|&x| kind.eval(x)).collect();
    Tensor::from_op(data, a.shape().to_vec(), vec![a.clone()], Unary { kind })
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        binary(self, rhs, BinaryKind::Add)
    }

    pub fn sub(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        binary(self, rhs, BinaryKind::Sub)
    }

    pub fn mul(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        binary(self, rhs, BinaryKind::Mul)
    }

    pub fn div(&self, rhs: &Tensor<S>) -> Result<Tensor<S>> {
        binary(self, rhs, BinaryKind::Div)
    }

    pub fn neg(&self) -> Tensor<S> {
        unary(self, UnaryKind::Neg)
    }

    pub fn exp(&self) -> Tensor<S> {
        unary(self, UnaryKind::Exp)
    }

    pub fn sqrt(&self) -> Tensor<S> {
        unary(self, UnaryKind::Sqrt)
    }

    /// `ln(1 + e^x)`, evaluated as `max(x, 0) + ln(1 + e^-|x|)`.
    pub fn softplus(&self) -> Tensor<S> {
        unary(self, UnaryKind::Softplus)
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        unary(self, UnaryKind::Sigmoid)
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Tensor<S> {
        unary(self, UnaryKind::Silu)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Tensor<S> {
        unary(self, UnaryKind::Gelu)
    }

    pub fn scale(&self, factor: f64) -> Tensor<S> {
        unary(self, UnaryKind::Scale(factor))
    }

    pub fn shift(&self, offset: f64) -> Tensor<S> {
        unary(self, UnaryKind::Shift(offset))
    }

    pub fn square(&self) -> Result<Tensor<S>> {
        self.mul(self)
    }
}
