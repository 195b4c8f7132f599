//! The finite-difference suite behind `dhm gradcheck`: every autodiff
//! primitive, the state-space kernel and a micro end-to-end model.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check_gradients, Tolerance};
use crate::autodiff::Tensor;
use crate::cassi::{HsiCube, Mask, SensingOperator};
use crate::config::Config;
use crate::error::Result;
use crate::ssm::{discretize_zoh, selective_scan, ssm_forward, ScanMode, SsmParams};
use crate::unfolding::train::sample_loss;
use crate::unfolding::Unfolding;

/// Tolerance for primitives and the scan kernel.
pub const PRIMITIVE_RTOL: f64 = 1e-4;
/// Tolerance for the end-to-end model.
pub const MODEL_RTOL: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub group: &'static str,
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

type Built = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

struct Case {
    name: &'static str,
    inputs: Vec<(Vec<usize>, f64, f64)>,
    f: Built,
}

fn case(
    name: &'static str,
    inputs: &[(&[usize], f64, f64)],
    f: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>> + 'static,
) -> Case {
    Case { name, inputs: inputs.iter().map(|(s, lo, hi)| (s.to_vec(), *lo, *hi)).collect(), f: Box::new(f) }
}

const R: f64 = 1.0;

fn primitive_cases() -> Vec<Case> {
    let std = |s: &'static [usize]| (s, -R, R);
    vec![
        case("add", &[std(&[3, 4]), std(&[4])], |x| x[0].add(&x[1])),
        case("sub", &[std(&[3, 1]), std(&[3, 4])], |x| x[0].sub(&x[1])),
        case("mul", &[std(&[2, 3]), std(&[2, 3])], |x| x[0].mul(&x[1])),
        case("div", &[std(&[2, 3]), (&[3], 0.5, 2.0)], |x| x[0].div(&x[1])),
        case("neg", &[std(&[5])], |x| Ok(x[0].neg())),
        case("exp", &[std(&[5])], |x| Ok(x[0].exp())),
        case("sqrt", &[(&[5], 0.2, 2.0)], |x| Ok(x[0].sqrt())),
        case("softplus", &[(&[6], -4.0, 4.0)], |x| Ok(x[0].softplus())),
        case("sigmoid", &[(&[6], -4.0, 4.0)], |x| Ok(x[0].sigmoid())),
        case("silu", &[(&[6], -4.0, 4.0)], |x| Ok(x[0].silu())),
        case("gelu", &[(&[6], -4.0, 4.0)], |x| Ok(x[0].gelu())),
        case("scale", &[std(&[4])], |x| Ok(x[0].scale(-1.7))),
        case("shift", &[std(&[4])], |x| Ok(x[0].shift(0.3))),
        case("matmul", &[std(&[3, 4]), std(&[4, 2])], |x| x[0].matmul(&x[1])),
        case("conv2d", &[std(&[5, 5, 2]), std(&[3, 3, 2, 3])], |x| x[0].conv2d(&x[1], 2, 1)),
        case("depthwise_conv2d", &[std(&[4, 5, 3]), std(&[3, 3, 3])], |x| x[0].depthwise_conv2d(&x[1], 1)),
        case("transposed_conv2d", &[std(&[3, 3, 2]), std(&[2, 2, 2, 3])], |x| x[0].transposed_conv2d(&x[1], 2, 0)),
        case("avg_pool2d", &[std(&[4, 4, 2])], |x| x[0].avg_pool2d((2, 2), 2)),
        case("layernorm", &[std(&[3, 5])], |x| x[0].layernorm(1e-5)),
        case("reshape", &[std(&[2, 6])], |x| x[0].reshape(&[3, 4])),
        case("permute", &[std(&[2, 3, 4])], |x| x[0].permute(&[2, 0, 1])),
        case("concat", &[std(&[2, 3]), std(&[2, 2])], |x| Tensor::concat(&[x[0].clone(), x[1].clone()], 1)),
        case("slice", &[std(&[4, 3])], |x| x[0].slice(0, 1, 2)),
        case("broadcast", &[std(&[3, 1])], |x| x[0].broadcast_to(&[3, 4])),
        case("sum", &[std(&[3, 4])], |x| x[0].sum_axes(&[1], false)),
        case("mean", &[std(&[3, 4])], |x| x[0].mean_axes(&[0], true)),
        case("index_select", &[std(&[4, 2])], |x| x[0].index_select(&[3, 0, 0, 2])),
        case("zoh_a", &[(&[2, 3], -1.0, -0.01), std(&[1, 4, 3]), (&[1, 4, 2], 0.05, 2.0)], |x| {
            Ok(discretize_zoh(&x[0], &x[1], &x[2])?.0)
        }),
        case("zoh_b", &[(&[2, 3], -1.0, -0.01), std(&[1, 4, 3]), (&[1, 4, 2], 0.05, 2.0)], |x| {
            Ok(discretize_zoh(&x[0], &x[1], &x[2])?.1)
        }),
    ]
}

/// Checks `f(inputs) · w` for a fixed random `w`, so every output entry's
/// adjoint contributes.
fn run_case(c: &Case, rng: &mut ChaCha8Rng, group: &'static str, rtol: f64) -> Result<SuiteEntry> {
    let inputs: Vec<Tensor<f64>> = c
        .inputs
        .iter()
        .enumerate()
        .map(|(i, (shape, lo, hi))| {
            let n = shape.iter().product();
            Tensor::parameter((0..n).map(|_| rng.random_range(*lo..*hi)).collect(), shape, format!("{}.in{i}", c.name))
        })
        .collect::<Result<_>>()?;
    let probe = (c.f)(&inputs)?;
    let weights = Tensor::from_vec((0..probe.numel()).map(|_| rng.random_range(-1.0..1.0)).collect(), probe.shape())?;
    drop(probe);
    let tol = Tolerance::new(1e-5, rtol, 1e-8);
    let report = check_gradients(&inputs, || (c.f)(&inputs)?.mul(&weights)?.sum_all(), &tol, None, 0)?;
    Ok(SuiteEntry { group, name: c.name.to_owned(), max_rel_err: report.max_rel_err(), tolerance: rtol })
}

/// One entry per differentiable primitive.
pub fn primitive_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    primitive_cases().iter().map(|c| run_case(c, &mut rng, "primitive", PRIMITIVE_RTOL)).collect()
}

/// The selective scan in both modes and the whole state-space layer.
pub fn scan_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for mode in [ScanMode::Sequential, ScanMode::Parallel] {
        let name: &'static str = match mode {
            ScanMode::Sequential => "selective_scan/seq",
            ScanMode::Parallel => "selective_scan/par",
        };
        let c = case(
            name,
            &[
                (&[2, 5, 3], -R, R),
                (&[2, 5, 3, 2], 0.1, 0.95),
                (&[2, 5, 3, 2], -R, R),
                (&[2, 5, 2], -R, R),
                (&[3], -R, R),
            ],
            move |x| selective_scan(&x[0], &x[1], &x[2], &x[3], &x[4], mode),
        );
        out.push(run_case(&c, &mut rng, "scan", PRIMITIVE_RTOL)?);
    }
    let params = SsmParams::<f64>::init(&mut rng, 3, 4, "ssm")?;
    for p in [&params.p_b, &params.p_c, &params.p_delta] {
        p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let s = Tensor::parameter((0..2 * 6 * 3).map(|_| rng.random_range(-R..R)).collect(), &[2, 6, 3], "s")?;
    let mut all = params.tensors();
    all.push(s.clone());
    let tol = Tolerance::new(1e-5, PRIMITIVE_RTOL, 1e-8);
    let report =
        check_gradients(&all, || ssm_forward(&s, &params, ScanMode::Parallel)?.square()?.sum_all(), &tol, None, 0)?;
    out.push(SuiteEntry {
        group: "scan",
        name: "ssm_layer".into(),
        max_rel_err: report.max_rel_err(),
        tolerance: PRIMITIVE_RTOL,
    });
    Ok(out)
}

/// Two stages on an `8 × 8 × 2` scene with `C = 4`, `D_s = 4`.
pub fn micro_config() -> Config {
    let mut c = Config::desk();
    c.net.bands = 2;
    c.net.channels = 4;
    c.net.state = 4;
    c.net.window = 2;
    c.unfold.stages = 2;
    c.train.crop = 8;
    c.train.cube_size = 8;
    c
}

/// Charbonnier loss of the micro model against central differences, with
/// `per_param` sampled entries of every weight tensor (`None` for all).
pub fn micro_model_suite(seed: u64, per_param: Option<usize>) -> Result<SuiteEntry> {
    let config = micro_config();
    let model = Unfolding::<f64>::new(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let (h, w, n) = (8, 8, config.net.bands);
    let cube = HsiCube::new(h, w, n, (0..h * w * n).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let op = SensingOperator::new(Mask::random_binary(h, w, &mut rng), n, config.unfold.shift)?;
    let y = op.measure(&cube)?;
    let tol = Tolerance::new(1e-5, MODEL_RTOL, 1e-8);
    let report = check_gradients(&model.params(), || sample_loss(&model, &op, &y, &cube), &tol, per_param, seed)?;
    Ok(SuiteEntry {
        group: "model",
        name: "unfolding_micro".into(),
        max_rel_err: report.max_rel_err(),
        tolerance: MODEL_RTOL,
    })
}

pub fn run_suite(seed: u64, per_param: Option<usize>) -> Result<Vec<SuiteEntry>> {
    let mut all = primitive_suite(seed)?;
    all.extend(scan_suite(seed)?);
    all.push(micro_model_suite(seed, per_param)?);
    Ok(all)
}

/// `group  name  max_rel_err  tolerance  status` rows.
pub fn format_report(entries: &[SuiteEntry]) -> String {
    let mut s = String::from("group\tname\tmax_rel_err\ttolerance\tstatus\n");
    for e in entries {
        let _ = writeln!(
            s,
            "{}\t{}\t{:.3e}\t{:.0e}\t{}",
            e.group,
            e.name,
            e.max_rel_err,
            e.tolerance,
            if e.passed() { "ok" } else { "FAIL" }
        );
    }
    s
}
