use rand::Rng;

use super::layers::{DepthwiseConv, LayerNorm, Linear};
use crate::autodiff::Tensor;
use crate::config::{BlockOrder, DhmConfig, Variant};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::ssm::{cross_merge, cross_scan, ssm_forward, ScanLayout, ScanMode, SsmParams};

/// Hyperspectral state-space block, global or windowed.
///
/// ```text
/// F_u = silu(P_u(dwconv(F)))
/// S   = merge(ssm_u(scan_u(F_u)) for the four paths)
/// out = P_o(LN(S) ⊙ silu(P_l(F)))
/// ```
#[derive(Clone, Debug)]
pub struct Hsb<S: Scalar> {
    pub layout: ScanLayout,
    pub dw: DepthwiseConv<S>,
    pub p_u: Linear<S>,
    pub p_l: Linear<S>,
    pub p_o: Linear<S>,
    pub norm: LayerNorm<S>,
    /// One set per path, or a single shared set.
    pub ssm: Vec<SsmParams<S>>,
}

impl<S: Scalar> Hsb<S> {
    pub fn new<R: Rng>(
        rng: &mut R,
        channels: usize,
        state: usize,
        layout: ScanLayout,
        share_directions: bool,
        name: &str,
    ) -> Result<Self> {
        let sets = if share_directions { 1 } else { 4 };
        Ok(Hsb {
            layout,
            dw: DepthwiseConv::new(rng, channels, &format!("{name}.dw"))?,
            p_u: Linear::new(rng, channels, channels, &format!("{name}.p_u"))?,
            p_l: Linear::new(rng, channels, channels, &format!("{name}.p_l"))?,
            p_o: Linear::new(rng, channels, channels, &format!("{name}.p_o"))?,
            norm: LayerNorm::new(channels, &format!("{name}.ln"))?,
            ssm: (0..sets)
                .map(|u| SsmParams::init(rng, channels, state, &format!("{name}.ssm{u}")))
                .collect::<Result<_>>()?,
        })
    }

    /// Merged state-space features before normalisation and gating.
    pub fn ssm_features(&self, x: &Tensor<S>, mode: ScanMode) -> Result<Tensor<S>> {
        let (h, w) = (x.dim(0), x.dim(1));
        let fu = self.p_u.forward(&self.dw.forward(x)?)?.silu();
        let seqs = cross_scan(&fu, self.layout)?;
        let mut ys = Vec::with_capacity(4);
        for (u, s) in seqs.iter().enumerate() {
            ys.push(ssm_forward(s, &self.ssm[u % self.ssm.len()], mode)?);
        }
        cross_merge(&ys.try_into().expect("four paths"), h, w, self.layout)
    }

    pub fn forward(&self, x: &Tensor<S>, mode: ScanMode) -> Result<Tensor<S>> {
        if x.rank() != 3 || x.dim(2) != self.p_u.weight.dim(0) {
            return Err(Error::shape("hsb", x.shape(), self.p_u.weight.shape()));
        }
        let merged = self.ssm_features(x, mode)?;
        let gate = self.p_l.forward(x)?.silu();
        self.p_o.forward(&self.norm.forward(&merged)?.mul(&gate)?)
    }

    pub fn params(&self, out: &mut Vec<Tensor<S>>) {
        self.dw.params(out);
        self.p_u.params(out);
        self.p_l.params(out);
        self.p_o.params(out);
        self.norm.params(out);
        for p in &self.ssm {
            out.extend(p.tensors());
        }
    }
}

/// Gated feed-forward: `P_out(gelu(P_gate F) ⊙ dwconv(P_val F))`.
#[derive(Clone, Debug)]
pub struct Gffn<S: Scalar> {
    pub p_gate: Linear<S>,
    pub p_val: Linear<S>,
    pub dw: DepthwiseConv<S>,
    pub p_out: Linear<S>,
}

impl<S: Scalar> Gffn<S> {
    pub fn new<R: Rng>(rng: &mut R, channels: usize, expansion: usize, name: &str) -> Result<Self> {
        let hidden = channels * expansion;
        Ok(Gffn {
            p_gate: Linear::new(rng, channels, hidden, &format!("{name}.p_gate"))?,
            p_val: Linear::new(rng, channels, hidden, &format!("{name}.p_val"))?,
            dw: DepthwiseConv::new(rng, hidden, &format!("{name}.dw"))?,
            p_out: Linear::new(rng, hidden, channels, &format!("{name}.p_out"))?,
        })
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let gate = self.p_gate.forward(x)?.gelu();
        let val = self.dw.forward(&self.p_val.forward(x)?)?;
        self.p_out.forward(&gate.mul(&val)?)
    }

    pub fn params(&self, out: &mut Vec<Tensor<S>>) {
        self.p_gate.params(out);
        self.p_val.params(out);
        self.dw.params(out);
        self.p_out.params(out);
    }
}

/// Dual block: pre-norm residual global branch, local branch and GFFN.
#[derive(Clone, Debug)]
pub struct Dhsb<S: Scalar> {
    pub global: Hsb<S>,
    pub local: Option<Hsb<S>>,
    pub ffn: Gffn<S>,
    pub norm_global: LayerNorm<S>,
    pub norm_local: Option<LayerNorm<S>>,
    pub norm_ffn: LayerNorm<S>,
    pub order: BlockOrder,
}

impl<S: Scalar> Dhsb<S> {
    pub fn new<R: Rng>(rng: &mut R, cfg: &DhmConfig, channels: usize, name: &str) -> Result<Self> {
        let full = cfg.variant == Variant::Full;
        let global =
            Hsb::new(rng, channels, cfg.state, ScanLayout::Global, cfg.share_directions, &format!("{name}.ghsb"))?;
        let local = if full {
            Some(Hsb::new(
                rng,
                channels,
                cfg.state,
                ScanLayout::Local(cfg.window),
                cfg.share_directions,
                &format!("{name}.lhsb"),
            )?)
        } else {
            None
        };
        Ok(Dhsb {
            global,
            local,
            ffn: Gffn::new(rng, channels, cfg.ffn_expansion, &format!("{name}.gffn"))?,
            norm_global: LayerNorm::new(channels, &format!("{name}.ln_g"))?,
            norm_local: if full { Some(LayerNorm::new(channels, &format!("{name}.ln_l"))?) } else { None },
            norm_ffn: LayerNorm::new(channels, &format!("{name}.ln_f"))?,
            order: cfg.block_order,
        })
    }

    fn global_step(&self, x: &Tensor<S>, mode: ScanMode) -> Result<Tensor<S>> {
        x.add(&self.global.forward(&self.norm_global.forward(x)?, mode)?)
    }

    fn local_step(&self, x: &Tensor<S>, mode: ScanMode) -> Result<Tensor<S>> {
        match (&self.local, &self.norm_local) {
            (Some(hsb), Some(norm)) => x.add(&hsb.forward(&norm.forward(x)?, mode)?),
            _ => Ok(x.clone()),
        }
    }

    pub fn forward(&self, x: &Tensor<S>, mode: ScanMode) -> Result<Tensor<S>> {
        let mid = match self.order {
            BlockOrder::GlobalFirst => self.local_step(&self.global_step(x, mode)?, mode)?,
            BlockOrder::LocalFirst => self.global_step(&self.local_step(x, mode)?, mode)?,
        };
        mid.add(&self.ffn.forward(&self.norm_ffn.forward(&mid)?)?)
    }

    pub fn params(&self, out: &mut Vec<Tensor<S>>) {
        self.norm_global.params(out);
        self.global.params(out);
        if let (Some(n), Some(l)) = (&self.norm_local, &self.local) {
            n.params(out);
            l.params(out);
        }
        self.norm_ffn.params(out);
        self.ffn.params(out);
    }
}
