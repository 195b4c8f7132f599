use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::learner::Learner;
use super::projection::{data_projection, measurement_tensor, OperatorTensors};
use crate::autodiff::{Checkpoint, Tensor};
use crate::cassi::{HsiCube, Measurement, SensingOperator};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::network::layers::Conv;
use crate::network::Dhm;
use crate::scalar::Scalar;

/// Iterates of one stage: `X_t`, `Z_t` and the stage's `η_t`, `ρ_t`.
#[derive(Clone, Debug)]
pub struct StageState<S: Scalar> {
    pub x: Tensor<S>,
    pub z: Tensor<S>,
    pub eta: Tensor<S>,
    pub rho: Tensor<S>,
}

/// The unfolded reconstruction network: initial estimate, parameter
/// learner and one denoiser shared by every stage.
#[derive(Clone, Debug)]
pub struct Unfolding<S: Scalar> {
    pub config: Config,
    init: Conv<S>,
    learner: Option<Learner<S>>,
    pub denoiser: Dhm<S>,
}

impl<S: Scalar> Unfolding<S> {
    /// Fresh weights drawn from a generator seeded with `seed`.
    pub fn new(config: &Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bands = config.net.bands;
        let init = Conv::new(&mut rng, 3, bands + 1, bands, 1, 1, "init")?;
        let learner = if config.unfold.learnable_eta || config.unfold.learnable_rho {
            Some(Learner::new(&mut rng, bands + 1, config.net.channels, config.unfold.max_stages)?)
        } else {
            None
        };
        let denoiser = Dhm::new(&mut rng, &config.net)?;
        Ok(Unfolding { config: config.clone(), init, learner, denoiser })
    }

    pub fn init_conv(&self) -> &Conv<S> {
        &self.init
    }

    pub fn learner(&self) -> Option<&Learner<S>> {
        self.learner.as_ref()
    }

    /// Channel concatenation of the sheared mask stack and the measurement.
    pub fn encode_inputs(&self, op: &OperatorTensors<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
        if op.bands() != self.config.net.bands {
            return Err(Error::shape("encode_inputs", op.mask.shape(), &[0, 0, self.config.net.bands]));
        }
        Tensor::concat(&[op.mask.clone(), y.clone()], 2)
    }

    pub fn init_z0(&self, op: &OperatorTensors<S>, y: &Tensor<S>) -> Result<Tensor<S>> {
        self.init.forward(&self.encode_inputs(op, y)?)
    }

    /// `(η_t, ρ_t)` for `t = 1..stages`; constants for the halves that are
    /// not learned.
    pub fn learn_params(
        &self,
        op: &OperatorTensors<S>,
        y: &Tensor<S>,
        stages: usize,
    ) -> Result<(Vec<Tensor<S>>, Vec<Tensor<S>>)> {
        let u = &self.config.unfold;
        let fixed = |v: f64| (0..stages).map(|_| Tensor::scalar(S::from_f64(v))).collect::<Vec<_>>();
        match &self.learner {
            Some(l) => {
                let (eta, rho) = l.forward(&self.encode_inputs(op, y)?, stages)?;
                Ok((if u.learnable_eta { eta } else { fixed(u.eta) }, if u.learnable_rho { rho } else { fixed(u.rho) }))
            }
            None => Ok((fixed(u.eta), fixed(u.rho))),
        }
    }

    /// Runs `stages` alternations of data projection and denoising and
    /// returns every stage's iterates; the reconstruction is the last `z`.
    pub fn run_stages(&self, op: &OperatorTensors<S>, y: &Tensor<S>, stages: usize) -> Result<Vec<StageState<S>>> {
        if stages == 0 || stages > self.config.unfold.max_stages {
            return Err(Error::invalid(
                "run_stages",
                format!("stages must be in 1..={}", self.config.unfold.max_stages),
            ));
        }
        let mut z = self.init_z0(op, y)?;
        let (eta, rho) = self.learn_params(op, y, stages)?;
        let mut out = Vec::with_capacity(stages);
        for (eta, rho) in eta.into_iter().zip(rho) {
            let x = data_projection(&z, op, y, &eta)?;
            z = self.denoiser.denoise(&x, &rho, self.config.unfold.pad)?;
            out.push(StageState { x, z: z.clone(), eta, rho });
        }
        Ok(out)
    }

    /// Reconstructed scene (`H × W × N`) for the configured stage count.
    pub fn reconstruct(&self, op: &SensingOperator, y: &Measurement) -> Result<HsiCube> {
        let ot = OperatorTensors::<S>::new(op)?;
        let yt = measurement_tensor(y)?;
        let states = self.run_stages(&ot, &yt, self.config.unfold.stages)?;
        let z = ot.unshift(&states.last().expect("at least one stage").z)?;
        let values = z.data().iter().map(|v| v.as_f64()).collect();
        HsiCube::new(op.height(), op.width(), op.bands(), values)
    }

    pub fn params(&self) -> Vec<Tensor<S>> {
        let mut out = Vec::new();
        self.init.params(&mut out);
        if let Some(l) = &self.learner {
            l.params(&mut out);
        }
        out.extend(self.denoiser.params());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::numel).sum()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(self.config.to_string(), &self.params())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.checkpoint().write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Rebuilds the model described by the checkpoint header and loads its
    /// weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = Config::from_text(&ck.header)?;
        let model = Unfolding::new(&config, 0)?;
        ck.assign(&model.params())?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read_from(BufReader::new(File::open(path)?))?)
    }
}
