//! Adam training on Charbonnier loss and held-out evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::Unfolding;
use super::projection::{charbonnier_loss, measurement_tensor, OperatorTensors, CHARBONNIER_EPS};
use crate::autodiff::{Adam, Tensor};
use crate::cassi::{add_noise, unshift_bands, HsiCube, Mask, Measurement, NoiseModel, SensingOperator};
use crate::error::{Error, Result};
use crate::metrics::{psnr, EvalReport};
use crate::scalar::Scalar;

/// Loss per step and validation PSNR at the steps where it was measured.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub validation: Vec<(usize, f64)>,
    pub seconds: f64,
}

impl TrainReport {
    /// Mean loss over `steps[range]`, for smoothing noisy per-sample losses.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.losses[range];
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }
}

fn cube_tensor<S: Scalar>(cube: &HsiCube) -> Result<Tensor<S>> {
    Tensor::from_vec(cube.values.iter().map(|&v| S::from_f64(v)).collect(), &[cube.height, cube.width, cube.bands])
}

fn center_crop(cube: &HsiCube, size: usize) -> Result<HsiCube> {
    if cube.height < size || cube.width < size {
        return Err(Error::invalid("train", format!("cube {}×{} smaller than crop {size}", cube.height, cube.width)));
    }
    cube.crop((cube.height - size) / 2, (cube.width - size) / 2, size, size)
}

/// One Charbonnier loss evaluation with its graph, for gradient checks and
/// the training step.
pub fn sample_loss<S: Scalar>(
    model: &Unfolding<S>,
    op: &SensingOperator,
    y: &Measurement,
    truth: &HsiCube,
) -> Result<Tensor<S>> {
    let ot = OperatorTensors::<S>::new(op)?;
    let yt = measurement_tensor(y)?;
    let states = model.run_stages(&ot, &yt, model.config.unfold.stages)?;
    let z = ot.unshift(&states.last().expect("at least one stage").z)?;
    charbonnier_loss(&z, &cube_tensor(truth)?, CHARBONNIER_EPS)
}

/// Trains every weight of `model` with Adam. Samples are visited in a
/// reshuffled order each pass, randomly cropped to `crop × crop` and
/// measured through `mask` on the fly. The learning rate halves once
/// `halve_at` of the steps are done. `log` receives progress lines.
pub fn train<S: Scalar>(
    model: &Unfolding<S>,
    train_set: &[HsiCube],
    val_set: &[HsiCube],
    mask: &Mask,
    log: &mut dyn FnMut(&str),
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::invalid("train", "empty dataset"));
    }
    let cfg = model.config.train.clone();
    let crop = cfg.crop;
    if (mask.height, mask.width) != (crop, crop) {
        return Err(Error::shape("train", &[mask.height, mask.width], &[crop, crop]));
    }
    let op = SensingOperator::new(mask.clone(), model.config.net.bands, model.config.unfold.shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = model.params();
    let mut adam = Adam::new(cfg.lr);
    let total = cfg.total_steps();
    let halve_step = (cfg.halve_at * total as f64).round() as usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();
    let start = Instant::now();
    for step in 0..total {
        if step % order.len() == 0 {
            order.shuffle(&mut rng);
        }
        adam.learning_rate = if step >= halve_step { cfg.lr * 0.5 } else { cfg.lr };
        let cube = &train_set[order[step % order.len()]];
        if cube.height < crop || cube.width < crop {
            return Err(Error::invalid(
                "train",
                format!("cube {}×{} smaller than crop {crop}", cube.height, cube.width),
            ));
        }
        let r0 = rng.random_range(0..=cube.height - crop);
        let c0 = rng.random_range(0..=cube.width - crop);
        let truth = cube.crop(r0, c0, crop, crop)?;
        let y = add_noise(&op.measure(&truth)?, cfg.noise, &mut rng)?;
        let loss = sample_loss(model, &op, &y, &truth)?;
        loss.backward()?;
        adam.step(&params)?;
        let value = loss.item().as_f64();
        if !value.is_finite() {
            return Err(Error::invalid("train", format!("loss diverged at step {step}")));
        }
        report.losses.push(value);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            let from = (step + 1).saturating_sub(cfg.log_every);
            log(&format!(
                "step {:>6}  loss {:.6}  lr {:.2e}",
                step + 1,
                report.mean_loss(from..step + 1),
                adam.learning_rate
            ));
        }
        let last = step + 1 == total;
        if !val_set.is_empty() && ((cfg.val_every > 0 && (step + 1) % cfg.val_every == 0) || last) {
            let val = validate(model, &op, val_set, cfg.seed)?;
            log(&format!("step {:>6}  val_psnr {:.3} dB", step + 1, val));
            report.validation.push((step + 1, val));
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Noisy measurements of centre crops of `cubes`, deterministic in `seed`.
pub fn simulate_set(
    op: &SensingOperator,
    cubes: &[HsiCube],
    noise: NoiseModel,
    seed: u64,
) -> Result<Vec<(HsiCube, Measurement)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_da7a);
    cubes
        .iter()
        .map(|c| {
            let truth = center_crop(c, op.height().min(op.width()))?;
            let y = add_noise(&op.measure(&truth)?, noise, &mut rng)?;
            Ok((truth, y))
        })
        .collect()
}

fn validate<S: Scalar>(model: &Unfolding<S>, op: &SensingOperator, cubes: &[HsiCube], seed: u64) -> Result<f64> {
    let pairs = simulate_set(op, cubes, model.config.train.noise, seed)?;
    let mut total = 0.0;
    for (truth, y) in &pairs {
        total += psnr(&model.reconstruct(op, y)?, truth, 1.0)?;
    }
    Ok(total / pairs.len() as f64)
}

/// `Ψᵀ(y ⊘ ψ)` mapped back to the scene grid: the starting point that the
/// learned reconstruction has to beat.
pub fn adjoint_baseline(op: &SensingOperator, y: &Measurement) -> Result<HsiCube> {
    unshift_bands(&op.normalized_adjoint(y)?, op.shift(), op.width())
}

/// Scores the model and the adjoint baseline on the same measurements.
/// Returns `(model, baseline)`.
pub fn evaluate<S: Scalar>(
    model: &Unfolding<S>,
    op: &SensingOperator,
    pairs: &[(HsiCube, Measurement)],
) -> Result<(EvalReport, EvalReport)> {
    let names: Vec<String> = (0..pairs.len()).map(|i| format!("scene{:02}", i + 1)).collect();
    let truth: Vec<HsiCube> = pairs.iter().map(|p| p.0.clone()).collect();
    let start = Instant::now();
    let recon = pairs.iter().map(|(_, y)| model.reconstruct(op, y)).collect::<Result<Vec<_>>>()?;
    let elapsed = start.elapsed().as_secs_f64();
    let base = pairs.iter().map(|(_, y)| adjoint_baseline(op, y)).collect::<Result<Vec<_>>>()?;
    let mut m = EvalReport::score(&names, &recon, &truth)?;
    m.runtime_s = elapsed;
    m.fingerprint = model.config.fingerprint();
    let mut b = EvalReport::score(&names, &base, &truth)?;
    b.fingerprint = "adjoint".into();
    Ok((m, b))
}
