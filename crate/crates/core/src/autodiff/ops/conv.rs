//! Spatial operators on `[H, W, C]` feature maps.
//!
//! Kernels are stored tap-major: `[KH, KW, C_in, C_out]` for dense and
//! transposed convolutions, `[KH, KW, C]` for depthwise ones. Padding is
//! symmetric and zero-filled.

use rayon::prelude::*;

use crate::autodiff::tensor::{BackwardOp, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const PAR_MIN_WORK: usize = 1 << 16;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    /// Input coordinate read by output `o` at tap `k`, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < extent).then_some(i as usize)
    }
}

fn conv_geometry(input: &[usize], weight: &[usize], stride: usize, pad: usize, op: &'static str) -> Result<Geometry> {
    if input.len() != 3 || weight.len() != 4 || input[2] != weight[2] {
        return Err(Error::shape(op, input, weight));
    }
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    let (h, w, cin) = (input[0], input[1], input[2]);
    let (kh, kw, cout) = (weight[0], weight[1], weight[3]);
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::invalid(op, format!("kernel {kh}x{kw} larger than padded input {h}x{w}")));
    }
    Ok(Geometry {
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        stride,
        pad,
        ho: (h + 2 * pad - kh) / stride + 1,
        wo: (w + 2 * pad - kw) / stride + 1,
    })
}

fn conv_forward<S: Scalar>(g: &Geometry, input: &[S], weight: &[S]) -> Vec<S> {
    let row_len = g.wo * g.cout;
    let mut out = vec![S::zero(); g.ho * row_len];
    let fill = |(oy, row): (usize, &mut [S])| {
        for ky in 0..g.kh {
            let Some(iy) = g.src(oy, ky, g.h) else { continue };
            for ox in 0..g.wo {
                let acc = &mut row[ox * g.cout..(ox + 1) * g.cout];
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let px = &input[(iy * g.w + ix) * g.cin..][..g.cin];
                    let tap = &weight[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (ic, &v) in px.iter().enumerate() {
                        if v == S::zero() {
                            continue;
                        }
                        for (a, &wv) in acc.iter_mut().zip(&tap[ic * g.cout..(ic + 1) * g.cout]) {
                            *a += v * wv;
                        }
                    }
                }
            }
        }
    };
    if out.len() * g.kh * g.kw * g.cin >= PAR_MIN_WORK && row_len > 0 {
        out.par_chunks_mut(row_len).enumerate().for_each(fill);
    } else if row_len > 0 {
        out.chunks_mut(row_len).enumerate().for_each(fill);
    }
    out
}

struct Conv2d {
    geom: Geometry,
}

impl<S: Scalar> BackwardOp<S> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, parents: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let g = &self.geom;
        let (x, w) = (&parents[0], &parents[1]);
        let xd = x.data();
        let wd = w.data();
        let mut gx = x.requires_grad().then(|| vec![S::zero(); xd.len()]);
        let mut gw = w.requires_grad().then(|| vec![S::zero(); wd.len()]);
        for oy in 0..g.ho {
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for ox in 0..g.wo {
                    let go = &grad[(oy * g.wo + ox) * g.cout..][..g.cout];
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.w) else { continue };
                        let pix = (iy * g.w + ix) * g.cin;
                        let tap = (ky * g.kw + kx) * g.cin * g.cout;
                        if let Some(gx) = gx.as_mut() {
                            for ic in 0..g.cin {
                                let wr = &wd[tap + ic * g.cout..][..g.cout];
                                gx[pix + ic] += go.iter().zip(wr).map(|(&a, &b)| a * b).sum::<S>();
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            for ic in 0..g.cin {
                                let v = xd[pix + ic];
                                for (dst, &gv) in gw[tap + ic * g.cout..][..g.cout].iter_mut().zip(go) {
                                    *dst += v * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![gx, gw])
    }
}

struct TransposedConv2d {
    geom: Geometry,
}

impl<S: Scalar> BackwardOp<S> for TransposedConv2d {
    fn name(&self) -> &'static str {
        "transposed_conv2d"
    }

    fn backward(&self, parents: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        // `geom` describes the forward conv whose input-adjoint this op is:
        // its (h, w) are this op's output extents and (ho, wo) its input.
        let g = &self.geom;
        let (x, w) = (&parents[0], &parents[1]);
        let xd = x.data();
        let wd = w.data();
        let mut gx = x.requires_grad().then(|| vec![S::zero(); xd.len()]);
        let mut gw = w.requires_grad().then(|| vec![S::zero(); wd.len()]);
        for iy in 0..g.ho {
            for ky in 0..g.kh {
                let Some(oy) = g.src(iy, ky, g.h) else { continue };
                for ix in 0..g.wo {
                    let pix = (iy * g.wo + ix) * g.cin;
                    for kx in 0..g.kw {
                        let Some(ox) = g.src(ix, kx, g.w) else { continue };
                        let go = &grad[(oy * g.w + ox) * g.cout..][..g.cout];
                        let tap = (ky * g.kw + kx) * g.cin * g.cout;
                        for ic in 0..g.cin {
                            let wr = &wd[tap + ic * g.cout..][..g.cout];
                            if let Some(gx) = gx.as_mut() {
                                gx[pix + ic] += go.iter().zip(wr).map(|(&a, &b)| a * b).sum::<S>();
                            }
                            if let Some(gw) = gw.as_mut() {
                                let v = xd[pix + ic];
                                for (dst, &gv) in gw[tap + ic * g.cout..][..g.cout].iter_mut().zip(go) {
                                    *dst += v * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![gx, gw])
    }
}

struct DepthwiseConv2d {
    geom: Geometry,
}

impl<S: Scalar> BackwardOp<S> for DepthwiseConv2d {
    fn name(&self) -> &'static str {
        "depthwise_conv2d"
    }

    fn backward(&self, parents: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let g = &self.geom;
        let c = g.cin;
        let (x, w) = (&parents[0], &parents[1]);
        let xd = x.data();
        let wd = w.data();
        let mut gx = x.requires_grad().then(|| vec![S::zero(); xd.len()]);
        let mut gw = w.requires_grad().then(|| vec![S::zero(); wd.len()]);
        for oy in 0..g.ho {
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for ox in 0..g.wo {
                    let go = &grad[(oy * g.wo + ox) * c..][..c];
                    for kx in 0..g.kw {
                        let Some(ix) = g.src(ox, kx, g.w) else { continue };
                        let pix = (iy * g.w + ix) * c;
                        let tap = (ky * g.kw + kx) * c;
                        if let Some(gx) = gx.as_mut() {
                            for ch in 0..c {
                                gx[pix + ch] += go[ch] * wd[tap + ch];
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            for ch in 0..c {
                                gw[tap + ch] += go[ch] * xd[pix + ch];
                            }
                        }
                    }
                }
            }
        }
        Ok(vec![gx, gw])
    }
}

struct AvgPool2d {
    geom: Geometry,
}

impl<S: Scalar> BackwardOp<S> for AvgPool2d {
    fn name(&self) -> &'static str {
        "avg_pool2d"
    }

    fn backward(&self, parents: &[Tensor<S>], _: &Tensor<S>, grad: &[S]) -> Result<Vec<Option<Vec<S>>>> {
        let g = &self.geom;
        let c = g.cin;
        let inv = S::one() / S::from_f64((g.kh * g.kw) as f64);
        let mut gx = vec![S::zero(); parents[0].numel()];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let go = &grad[(oy * g.wo + ox) * c..][..c];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let pix = ((oy * g.stride + ky) * g.w + ox * g.stride + kx) * c;
                        for ch in 0..c {
                            gx[pix + ch] += go[ch] * inv;
                        }
                    }
                }
            }
        }
        Ok(vec![Some(gx)])
    }
}

impl<S: Scalar> Tensor<S> {
    /// Dense 2-D convolution of an `[H, W, C_in]` map with a
    /// `[KH, KW, C_in, C_out]` kernel.
    pub fn conv2d(&self, weight: &Tensor<S>, stride: usize, padding: usize) -> Result<Tensor<S>> {
        let geom = conv_geometry(self.shape(), weight.shape(), stride, padding, "conv2d")?;
        let out = conv_forward(&geom, &self.data(), &weight.data());
        Ok(Tensor::from_op(out, vec![geom.ho, geom.wo, geom.cout], vec![self.clone(), weight.clone()], Conv2d { geom }))
    }

    /// Per-channel convolution with a `[KH, KW, C]` kernel, stride 1.
    pub fn depthwise_conv2d(&self, weight: &Tensor<S>, padding: usize) -> Result<Tensor<S>> {
        let (ws, xs) = (weight.shape(), self.shape());
        if xs.len() != 3 || ws.len() != 3 || ws[2] != xs[2] {
            return Err(Error::shape("depthwise_conv2d", xs, ws));
        }
        let geom = conv_geometry(xs, &[ws[0], ws[1], ws[2], ws[2]], 1, padding, "depthwise_conv2d")?;
        let c = geom.cin;
        let mut out = vec![S::zero(); geom.ho * geom.wo * c];
        {
            let xd = self.data();
            let wd = weight.data();
            for oy in 0..geom.ho {
                for ky in 0..geom.kh {
                    let Some(iy) = geom.src(oy, ky, geom.h) else { continue };
                    for ox in 0..geom.wo {
                        let acc = &mut out[(oy * geom.wo + ox) * c..][..c];
                        for kx in 0..geom.kw {
                            let Some(ix) = geom.src(ox, kx, geom.w) else { continue };
                            let px = &xd[(iy * geom.w + ix) * c..][..c];
                            let tap = &wd[(ky * geom.kw + kx) * c..][..c];
                            for ((a, &v), &k) in acc.iter_mut().zip(px).zip(tap) {
                                *a += v * k;
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![geom.ho, geom.wo, c],
            vec![self.clone(), weight.clone()],
            DepthwiseConv2d { geom },
        ))
    }

    /// Transposed convolution (the input-adjoint of [`Tensor::conv2d`]).
    /// Output extent is `(H - 1) * stride - 2 * padding + KH`.
    pub fn transposed_conv2d(&self, weight: &Tensor<S>, stride: usize, padding: usize) -> Result<Tensor<S>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 3 || ws.len() != 4 || xs[2] != ws[2] || stride == 0 {
            return Err(Error::shape("transposed_conv2d", xs, ws));
        }
        let (kh, kw, cin, cout) = (ws[0], ws[1], ws[2], ws[3]);
        let oh = ((xs[0] - 1) * stride + kh).checked_sub(2 * padding);
        let ow = ((xs[1] - 1) * stride + kw).checked_sub(2 * padding);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(Error::invalid("transposed_conv2d", "padding exceeds output extent"));
        };
        let geom = Geometry { h: oh, w: ow, cin, kh, kw, cout, stride, pad: padding, ho: xs[0], wo: xs[1] };
        let mut out = vec![S::zero(); oh * ow * cout];
        {
            let xd = self.data();
            let wd = weight.data();
            for iy in 0..geom.ho {
                for ky in 0..kh {
                    let Some(oy) = geom.src(iy, ky, oh) else { continue };
                    for ix in 0..geom.wo {
                        let px = &xd[(iy * geom.wo + ix) * cin..][..cin];
                        for kx in 0..kw {
                            let Some(ox) = geom.src(ix, kx, ow) else { continue };
                            let acc = &mut out[(oy * ow + ox) * cout..][..cout];
                            let tap = &wd[(ky * kw + kx) * cin * cout..][..cin * cout];
                            for (ic, &v) in px.iter().enumerate() {
                                for (a, &k) in acc.iter_mut().zip(&tap[ic * cout..(ic + 1) * cout]) {
                                    *a += v * k;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(out, vec![oh, ow, cout], vec![self.clone(), weight.clone()], TransposedConv2d { geom }))
    }

    /// Mean over `kernel × kernel` windows, no padding.
    pub fn avg_pool2d(&self, kernel: (usize, usize), stride: usize) -> Result<Tensor<S>> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(Error::shape("avg_pool2d", xs, &[kernel.0, kernel.1]));
        }
        let c = xs[2];
        let geom = conv_geometry(xs, &[kernel.0, kernel.1, c, c], stride, 0, "avg_pool2d")?;
        let inv = S::one() / S::from_f64((kernel.0 * kernel.1) as f64);
        let mut out = vec![S::zero(); geom.ho * geom.wo * c];
        {
            let xd = self.data();
            for oy in 0..geom.ho {
                for ox in 0..geom.wo {
                    let acc = &mut out[(oy * geom.wo + ox) * c..][..c];
                    for ky in 0..geom.kh {
                        for kx in 0..geom.kw {
                            let px = &xd[((oy * stride + ky) * geom.w + ox * stride + kx) * c..][..c];
                            for (a, &v) in acc.iter_mut().zip(px) {
                                *a += v * inv;
                            }
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_op(out, vec![geom.ho, geom.wo, c], vec![self.clone()], AvgPool2d { geom }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product::<usize>();
        Tensor::from_vec((0..n).map(|i| (i as f64 * 0.37).sin()).collect(), shape).unwrap()
    }

    #[test]
    fn centered_delta_depthwise_is_identity() {
        let x = ramp(&[5, 4, 3]);
        let mut k = vec![0.0; 27];
        for c in 0..3 {
            k[(3 + 1) * 3 + c] = 1.0;
        }
        let k = Tensor::from_vec(k, &[3, 3, 3]).unwrap();
        assert_eq!(x.depthwise_conv2d(&k, 1).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn conv_output_extents() {
        let x = ramp(&[8, 10, 2]);
        let w = ramp(&[3, 3, 2, 4]);
        assert_eq!(x.conv2d(&w, 1, 1).unwrap().shape(), &[8, 10, 4]);
        assert_eq!(x.conv2d(&w, 2, 1).unwrap().shape(), &[4, 5, 4]);
        let up = ramp(&[2, 2, 4, 3]);
        assert_eq!(ramp(&[4, 5, 4]).transposed_conv2d(&up, 2, 0).unwrap().shape(), &[8, 10, 3]);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, convT(y)> for matching geometry
        let x = ramp(&[5, 5, 2]);
        let w = ramp(&[3, 3, 2, 3]);
        let y = Tensor::from_vec((0..27).map(|i| (i as f64 * 0.11).cos()).collect(), &[3, 3, 3]).unwrap();
        let cx = x.conv2d(&w, 2, 1).unwrap();
        let lhs: f64 = cx.data().iter().zip(y.data().iter()).map(|(a, b)| a * b).sum();
        // convT maps [3,3,C_out] back; needs a [KH,KW,C_out,C_in] kernel
        let wt: Vec<f64> = {
            let wd = w.data();
            let mut v = vec![0.0; wd.len()];
            for t in 0..9 {
                for i in 0..2 {
                    for o in 0..3 {
                        v[t * 6 + o * 2 + i] = wd[t * 6 + i * 3 + o];
                    }
                }
            }
            v
        };
        let wt = Tensor::from_vec(wt, &[3, 3, 3, 2]).unwrap();
        let ty = y.transposed_conv2d(&wt, 2, 1).unwrap();
        assert_eq!(ty.shape(), &[5, 5, 2]);
        let rhs: f64 = x.data().iter().zip(ty.data().iter()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn global_average_pool() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2, 1]).unwrap();
        assert_eq!(x.avg_pool2d((2, 2), 2).unwrap().to_vec(), vec![2.5]);
    }
}
