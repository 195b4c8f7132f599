use rand::Rng;

use super::blocks::Dhsb;
use super::layers::{Conv, ConvTranspose};
use crate::autodiff::Tensor;
use crate::config::DhmConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
struct EncoderLevel<S: Scalar> {
    block: Dhsb<S>,
    down: Conv<S>,
}

#[derive(Clone, Debug)]
struct DecoderLevel<S: Scalar> {
    up: ConvTranspose<S>,
    fuse: Conv<S>,
    block: Dhsb<S>,
}

/// U-shaped denoiser mapping `X_t` (`H × W × N_ω`) and a noise level `ρ_t`
/// to `Z_t = X_t + F_z`.
///
/// The input is the channel concatenation of `X_t` and a constant `ρ_t`
/// plane. Each encoder level is a dual block followed by a 4×4 stride-2
/// convolution doubling the width; the decoder mirrors it with 2×2 stride-2
/// transposed convolutions, concatenated skips and 1×1 fusion.
#[derive(Clone, Debug)]
pub struct Dhm<S: Scalar> {
    pub config: DhmConfig,
    input: Conv<S>,
    encoder: Vec<EncoderLevel<S>>,
    bottleneck: Vec<Dhsb<S>>,
    decoder: Vec<DecoderLevel<S>>,
    output: Conv<S>,
}

/// Zero-pads the first two axes of `x` to `h × w`.
pub(crate) fn pad_hw<S: Scalar>(x: &Tensor<S>, h: usize, w: usize) -> Result<Tensor<S>> {
    let (xh, xw, c) = (x.dim(0), x.dim(1), x.dim(2));
    let mut y = x.clone();
    if w > xw {
        y = Tensor::concat(&[y, Tensor::zeros(&[xh, w - xw, c])], 1)?;
    }
    if h > xh {
        y = Tensor::concat(&[y, Tensor::zeros(&[h - xh, w, c])], 0)?;
    }
    Ok(y)
}

impl<S: Scalar> Dhm<S> {
    pub fn new<R: Rng>(rng: &mut R, config: &DhmConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let input = Conv::new(rng, 3, config.bands + 1, c, 1, 1, "dhm.input")?;
        let mut encoder = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let ch = config.level_channels(l);
            encoder.push(EncoderLevel {
                block: Dhsb::new(rng, config, ch, &format!("dhm.enc{l}"))?,
                down: Conv::new(rng, 4, ch, 2 * ch, 2, 1, &format!("dhm.enc{l}.down"))?,
            });
        }
        let deep = config.level_channels(config.depth);
        let bottleneck = (0..config.bottleneck)
            .map(|i| Dhsb::new(rng, config, deep, &format!("dhm.mid{i}")))
            .collect::<Result<_>>()?;
        let mut decoder = Vec::with_capacity(config.depth);
        for l in (0..config.depth).rev() {
            let ch = config.level_channels(l);
            decoder.push(DecoderLevel {
                up: ConvTranspose::new(rng, 2, 2 * ch, ch, 2, &format!("dhm.dec{l}.up"))?,
                fuse: Conv::new(rng, 1, 2 * ch, ch, 1, 0, &format!("dhm.dec{l}.fuse"))?,
                block: Dhsb::new(rng, config, ch, &format!("dhm.dec{l}"))?,
            });
        }
        let output = Conv::new(rng, 3, c, config.bands, 1, 1, "dhm.output")?;
        Ok(Dhm { config: config.clone(), input, encoder, bottleneck, decoder, output })
    }

    /// Output convolution; zeroing it turns the denoiser into the identity.
    pub fn output_conv(&self) -> &Conv<S> {
        &self.output
    }

    /// Denoises `x` (`H × W × N_ω`) at level `rho` (single element, > 0).
    ///
    /// With `pad`, extents that are not multiples of
    /// [`DhmConfig::spatial_multiple`] are zero-padded internally and the
    /// result is cropped back; otherwise they are an error.
    pub fn denoise(&self, x: &Tensor<S>, rho: &Tensor<S>, pad: bool) -> Result<Tensor<S>> {
        let cfg = &self.config;
        if x.rank() != 3 || x.dim(2) != cfg.bands {
            return Err(Error::shape("dhm_denoise", x.shape(), &[0, 0, cfg.bands]));
        }
        if rho.numel() != 1 || !(rho.item() > S::zero()) {
            return Err(Error::invalid("dhm_denoise", "ρ must be a single positive value"));
        }
        let (h, w) = (x.dim(0), x.dim(1));
        let m = cfg.spatial_multiple();
        if !pad && (h % m != 0 || w % m != 0) {
            return Err(Error::invalid("dhm_denoise", format!("extents {h}×{w} are not multiples of {m}")));
        }
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let xp = pad_hw(x, ph, pw)?;
        let plane = rho.reshape(&[1, 1, 1])?.broadcast_to(&[ph, pw, 1])?;
        let mut f = self.input.forward(&Tensor::concat(&[xp, plane], 2)?)?;

        let mode = cfg.scan_mode;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for level in &self.encoder {
            let y = level.block.forward(&f, mode)?;
            f = level.down.forward(&y)?;
            skips.push(y);
        }
        for block in &self.bottleneck {
            f = block.forward(&f, mode)?;
        }
        for level in &self.decoder {
            let skip = skips.pop().expect("one skip per level");
            let up = level.up.forward(&f)?;
            f = level.fuse.forward(&Tensor::concat(&[up, skip], 2)?)?;
            f = level.block.forward(&f, mode)?;
        }
        let mut fz = self.output.forward(&f)?;
        if (ph, pw) != (h, w) {
            fz = fz.slice(0, 0, h)?.slice(1, 0, w)?;
        }
        x.add(&fz)
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        let mut out = Vec::new();
        self.input.params(&mut out);
        for level in &self.encoder {
            level.block.params(&mut out);
            level.down.params(&mut out);
        }
        for b in &self.bottleneck {
            b.params(&mut out);
        }
        for level in &self.decoder {
            level.up.params(&mut out);
            level.fuse.params(&mut out);
            level.block.params(&mut out);
        }
        self.output.params(&mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::numel).sum()
    }
}
