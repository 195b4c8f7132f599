use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::network::layers::{Conv, Linear};
use crate::scalar::Scalar;

/// Floor added after softplus so `η`, `ρ` stay strictly positive.
pub const PARAM_FLOOR: f64 = 1e-4;

/// Degradation-aware block: conv, GELU, conv, GELU, conv.
#[derive(Clone, Debug)]
struct Dab<S: Scalar> {
    convs: [Conv<S>; 3],
}

impl<S: Scalar> Dab<S> {
    fn new<R: Rng>(rng: &mut R, cin: usize, width: usize, name: &str) -> Result<Self> {
        Ok(Dab {
            convs: [
                Conv::new(rng, 3, cin, width, 1, 1, &format!("{name}.c0"))?,
                Conv::new(rng, 3, width, width, 1, 1, &format!("{name}.c1"))?,
                Conv::new(rng, 3, width, width, 1, 1, &format!("{name}.c2"))?,
            ],
        })
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let h = self.convs[0].forward(x)?.gelu();
        let h = self.convs[1].forward(&h)?.gelu();
        self.convs[2].forward(&h)
    }
}

/// Parameter learner: two DABs, global average pooling and three fully
/// connected layers producing `2 · max_stages` values, mapped to positive
/// `(η, ρ)` by `softplus(·) + 1e-4`.
#[derive(Clone, Debug)]
pub struct Learner<S: Scalar> {
    dabs: [Dab<S>; 2],
    fc: [Linear<S>; 3],
    max_stages: usize,
}

impl<S: Scalar> Learner<S> {
    pub fn new<R: Rng>(rng: &mut R, cin: usize, width: usize, max_stages: usize) -> Result<Self> {
        // fan-in scaled like the convolutions
        let fc = |rng: &mut R, i: usize, o: usize, n: &str| Linear::with_std(rng, i, o, 1.0 / (i as f64).sqrt(), n);
        Ok(Learner {
            dabs: [Dab::new(rng, cin, width, "learner.dab0")?, Dab::new(rng, width, width, "learner.dab1")?],
            fc: [
                fc(rng, width, width, "learner.fc0")?,
                fc(rng, width, width, "learner.fc1")?,
                fc(rng, width, 2 * max_stages, "learner.fc2")?,
            ],
            max_stages,
        })
    }

    /// Final layer, exposed so tests can zero it.
    pub fn head(&self) -> &Linear<S> {
        &self.fc[2]
    }

    /// `(η, ρ)` for the first `stages` stages; each entry is a one-element
    /// tensor.
    pub fn forward(&self, input: &Tensor<S>, stages: usize) -> Result<(Vec<Tensor<S>>, Vec<Tensor<S>>)> {
        let h = self.dabs[1].forward(&self.dabs[0].forward(input)?)?;
        let (hh, ww, c) = (h.dim(0), h.dim(1), h.dim(2));
        let pooled = h.avg_pool2d((hh, ww), 1)?.reshape(&[1, c])?;
        let f = self.fc[0].forward(&pooled)?.gelu();
        let f = self.fc[1].forward(&f)?.gelu();
        let raw = self.fc[2].forward(&f)?.reshape(&[2 * self.max_stages])?;
        let pos = raw.softplus().shift(PARAM_FLOOR);
        let eta = (0..stages).map(|t| pos.slice(0, t, 1)).collect::<Result<_>>()?;
        let rho = (0..stages).map(|t| pos.slice(0, self.max_stages + t, 1)).collect::<Result<_>>()?;
        Ok((eta, rho))
    }

    pub fn params(&self, out: &mut Vec<Tensor<S>>) {
        for d in &self.dabs {
            for c in &d.convs {
                c.params(out);
            }
        }
        for l in &self.fc {
            l.params(out);
        }
    }
}
