//! The ten acceptance criteria, one line each. Exits nonzero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{
    adjoint_defect, dense_deviation, dense_projection, psnr_oracle, random_cube, random_mask, random_measurement,
    rel_err, scan_oracle, ssim_plane_oracle, taylor_exp, taylor_expm1_ratio,
};
use dhm::cassi::{Mask, NoiseModel, SensingOperator, DENSE_CAP};
use dhm::config::Config;
use dhm::dataset::synth_dataset;
use dhm::gradsuite::run_suite;
use dhm::metrics::{psnr, ssim};
use dhm::ssm::bench::{default_lengths, loglog_slope, sweep};
use dhm::ssm::kernel::{scan_forward, ScanDims};
use dhm::ssm::{cross_merge, cross_scan, discretize_zoh, scan_paths, ScanLayout, ScanMode};
use dhm::unfolding::data_projection_f64;
use dhm::unfolding::train::{evaluate, simulate_set, train};
use dhm::unfolding::Unfolding;
use dhm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn adjointness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let op = SensingOperator::new(random_mask(&mut rng, 8, 8), 4, 2).map_err(err)?;
        let x = random_cube(&mut rng, 8, op.shifted_width(), 4);
        let y = random_measurement(&mut rng, &op);
        worst = worst.max(adjoint_defect(&op, &x, &y));
    }
    Ok((worst <= 1e-12, format!("100 trials, max defect {worst:.2e}")))
}

fn dense_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut count, mut dev, mut off) = (0, 0.0f64, 0.0f64);
    for h in 1..=4 {
        for w in 1..=4 {
            for n in 1..=3 {
                for s in 0..=2 {
                    let op = SensingOperator::new(random_mask(&mut rng, h, w), n, s).map_err(err)?;
                    if h * op.shifted_width() * n > DENSE_CAP {
                        continue;
                    }
                    let (d, o) = dense_deviation(&mut rng, &op);
                    dev = dev.max(d);
                    off = off.max(o);
                    count += 1;
                }
            }
        }
    }
    Ok((
        dev <= 1e-14 && off <= 1e-14,
        format!("{count} instances, max deviation {dev:.2e}, max off-diagonal {off:.2e}"),
    ))
}

fn projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..4));
        let shift = rng.random_range(0..3);
        let op = SensingOperator::new(random_mask(&mut rng, h, w), n, shift).map_err(err)?;
        let z = random_cube(&mut rng, h, op.shifted_width(), n);
        let y = random_measurement(&mut rng, &op);
        let eta = 10f64.powf(rng.random_range(-3.0..=3.0));
        let got = data_projection_f64(&op, &z, &y, eta).map_err(err)?;
        worst = worst.max(rel_err(&got.values, &dense_projection(&op, &z.values, &y.values, eta)));
    }
    Ok((worst <= 1e-10, format!("50 instances, max rel err {worst:.2e}")))
}

fn zoh() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (g, l, d, ds) = (3, 8, 4, 4);
    let a: Vec<f64> = (0..d * ds).map(|_| rng.random_range(-1.5..-1e-3)).collect();
    let b: Vec<f64> = (0..g * l * ds).map(|_| rng.random_range(-2.0..2.0)).collect();
    let dt: Vec<f64> = (0..g * l * d).map(|_| 10f64.powf(rng.random_range(-4.0..0.5))).collect();
    let at = Tensor::from_vec(a.clone(), &[d, ds]).map_err(err)?;
    let bt = Tensor::from_vec(b.clone(), &[g, l, ds]).map_err(err)?;
    let dtt = Tensor::from_vec(dt.clone(), &[g, l, d]).map_err(err)?;
    let (ab, bb) = discretize_zoh(&at, &bt, &dtt).map_err(err)?;
    let (ab, bb) = (ab.to_vec(), bb.to_vec());
    let mut worst = 0.0f64;
    for row in 0..g * l {
        for j in 0..d {
            for s in 0..ds {
                let i = (row * d + j) * ds + s;
                let x = dt[row * d + j] * a[j * ds + s];
                let want_a = taylor_exp(x, 30);
                let want_b = dt[row * d + j] * taylor_expm1_ratio(x, 30) * b[row * ds + s];
                worst = worst.max((ab[i] - want_a).abs() / want_a.abs());
                worst = worst.max((bb[i] - want_b).abs() / want_b.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    let bl: Vec<f64> = (0..ds).map(|_| rng.random_range(-2.0..2.0)).collect();
    let at = Tensor::from_vec(a[..ds].to_vec(), &[1, ds]).map_err(err)?;
    let bt = Tensor::from_vec(bl.clone(), &[1, 1, ds]).map_err(err)?;
    let small = Tensor::from_vec(vec![1e-8], &[1, 1, 1]).map_err(err)?;
    let (_, bs) = discretize_zoh(&at, &bt, &small).map_err(err)?;
    let limit = bs.to_vec().iter().zip(&bl).map(|(v, bv)| (v / (1e-8 * bv) - 1.0).abs()).fold(0.0, f64::max);
    Ok((worst <= 1e-10 && limit <= 1e-6, format!("series max rel err {worst:.2e}, small-step deviation {limit:.2e}")))
}

fn scan_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let dims = ScanDims {
            groups: rng.random_range(1..5),
            len: rng.random_range(1..400),
            channels: rng.random_range(1..6),
            state: rng.random_range(1..6),
        };
        let gl = dims.groups * dims.len;
        let mut v = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
        let u = v(gl * dims.channels, -1.0, 1.0);
        let a = v(dims.elements(), 0.0, 1.0);
        let b = v(dims.elements(), -1.0, 1.0);
        let c = v(gl * dims.state, -1.0, 1.0);
        let nu = v(dims.channels, -1.0, 1.0);
        let (s, _) = scan_forward(dims, &u, &a, &b, &c, &nu, ScanMode::Sequential, false);
        let (p, _) = scan_forward(dims, &u, &a, &b, &c, &nu, ScanMode::Parallel, false);
        worst = worst.max(max_rel(&p, &s));
        let want = scan_oracle((dims.groups, dims.len, dims.channels, dims.state), &u, &a, &b, &c, &nu);
        worst = worst.max(max_rel(&s, &want));
    }

    let mut exact = true;
    let mut perms = true;
    for h in 1..=6 {
        for w in 1..=6 {
            let d = rng.random_range(1..4);
            let f: Vec<f64> = (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = Tensor::from_vec(f.clone(), &[h, w, d]).map_err(err)?;
            let mut layouts = vec![ScanLayout::Global];
            if h % 2 == 0 && w % 2 == 0 {
                layouts.push(ScanLayout::Local(2));
            }
            for layout in layouts {
                for p in scan_paths(h, w, layout).map_err(err)? {
                    let mut s = p.clone();
                    s.sort_unstable();
                    perms &= s == (0..h * w).collect::<Vec<_>>();
                }
                let seqs = cross_scan(&t, layout).map_err(err)?;
                let zero = Tensor::zeros(seqs[0].shape());
                for k in 0..4 {
                    let mut only: [Tensor<f64>; 4] = std::array::from_fn(|_| zero.clone());
                    only[k] = seqs[k].clone();
                    exact &= cross_merge(&only, h, w, layout).map_err(err)?.to_vec() == f;
                }
                let four: Vec<f64> = f.iter().map(|&x| ((x + x) + x) + x).collect();
                exact &= cross_merge(&seqs, h, w, layout).map_err(err)?.to_vec() == four;
            }
        }
    }
    Ok((
        worst <= 1e-12 && exact && perms,
        format!("200 configs, max rel err {worst:.2e}; round trip exact: {exact}; paths are permutations: {perms}"),
    ))
}

fn gradients() -> Outcome {
    let entries = run_suite(0, Some(4)).map_err(err)?;
    let failed: Vec<_> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.clone()).collect();
    let worst = |group: &str| entries.iter().filter(|e| e.group == group).map(|e| e.max_rel_err).fold(0.0, f64::max);
    let mut detail = format!(
        "{} checks, max rel err primitive {:.2e}, scan {:.2e}, model {:.2e}",
        entries.len(),
        worst("primitive"),
        worst("scan"),
        worst("model")
    );
    if !failed.is_empty() {
        detail += &format!("; failed: {}", failed.join(", "));
    }
    Ok((failed.is_empty(), detail))
}

fn desk_training() -> Outcome {
    let base = Config::desk();
    let (size, bands) = (base.train.cube_size, base.net.bands);
    let data = synth_dataset(base.train.train_count + base.train.val_count, size, size, bands, 0).map_err(err)?;
    let (train_set, held_out) = data.split_at(base.train.train_count);
    let mask = Mask::random_binary(size, size, &mut ChaCha8Rng::seed_from_u64(7));
    let op = SensingOperator::new(mask.clone(), bands, base.unfold.shift).map_err(err)?;
    let pairs = simulate_set(&op, held_out, NoiseModel::None, 1).map_err(err)?;
    let mut psnrs = Vec::new();
    let mut baseline = 0.0;
    for light in [false, true] {
        let mut cfg = base.clone();
        if light {
            cfg.net = cfg.net.light();
        }
        let model = Unfolding::<f32>::new(&cfg, 0).map_err(err)?;
        train(&model, train_set, &[], &mask, &mut |_| {}).map_err(err)?;
        let (m, b) = evaluate(&model, &op, &pairs).map_err(err)?;
        psnrs.push(m.mean_psnr());
        baseline = b.mean_psnr();
    }
    let (full, light) = (psnrs[0], psnrs[1]);
    Ok((
        full - baseline >= 3.0 && full >= light - 0.2,
        format!("full {full:.2} dB, light {light:.2} dB, adjoint baseline {baseline:.2} dB"),
    ))
}

fn shared_weights() -> Outcome {
    let counts: Vec<usize> = [1, 3, 9]
        .iter()
        .map(|&t| {
            let mut c = Config::desk();
            c.unfold.stages = t;
            Unfolding::<f32>::new(&c, 0).map(|m| m.param_count())
        })
        .collect::<dhm::Result<_>>()
        .map_err(err)?;
    Ok((counts.windows(2).all(|w| w[0] == w[1]), format!("parameter counts for T = 1, 3, 9: {counts:?}")))
}

fn scaling() -> Outcome {
    let threads = 4;
    let lengths = default_lengths();
    let rows = sweep(&[ScanMode::Sequential, ScanMode::Parallel], &lengths, 4, 4, threads, 5, 0).map_err(err)?;
    let (seq, par) = rows.split_at(lengths.len());
    let (s_seq, s_par) = (loglog_slope(seq), loglog_slope(par));
    let at = |rows: &[dhm::ssm::bench::BenchRow]| rows.iter().find(|r| r.dims.len == 65536).map(|r| r.seconds());
    let speedup = at(seq).zip(at(par)).map(|(s, p)| s / p).ok_or("no L = 65536 row")?;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let slopes_ok = (s_seq - 1.0).abs() <= 0.15 && (s_par - 1.0).abs() <= 0.15;
    Ok((
        slopes_ok && speedup >= 2.0,
        format!("slope seq {s_seq:.3}, par {s_par:.3}; speedup at L = 65536 {speedup:.2}x with {threads} threads on {cores} cores"),
    ))
}

fn metric_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut p_err, mut s_err, mut sym) = (0.0f64, 0.0f64, 0.0f64);
    let mut identity = true;
    let mut bounded = true;
    for _ in 0..10 {
        let a = random_cube(&mut rng, 13, 16, 3);
        let b = random_cube(&mut rng, 13, 16, 3);
        p_err = p_err.max((psnr(&a, &b, 1.0).map_err(err)? - psnr_oracle(&a.values, &b.values)).abs());
        let want = (0..3).map(|k| ssim_plane_oracle(&a.band(k), &b.band(k), 13, 16)).sum::<f64>() / 3.0;
        let ab = ssim(&a, &b).map_err(err)?;
        s_err = s_err.max((ab - want).abs());
        sym = sym.max((ab - ssim(&b, &a).map_err(err)?).abs());
        sym = sym.max((psnr(&a, &b, 1.0).map_err(err)? - psnr(&b, &a, 1.0).map_err(err)?).abs());
        identity &= ssim(&a, &a).map_err(err)? == 1.0 && psnr(&a, &a, 1.0).map_err(err)? == f64::INFINITY;
        bounded &= (-1.0..=1.0).contains(&ab);
    }
    Ok((
        p_err <= 1e-9 && s_err <= 1e-12 && sym <= 1e-12 && identity && bounded,
        format!("psnr oracle err {p_err:.1e}, ssim oracle err {s_err:.1e}, asymmetry {sym:.1e}, identity {identity}, bounds {bounded}"),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, f64, fn() -> Outcome); 10] = [
        ("operator adjointness", 1.0, adjointness),
        ("dense oracle equivalence", 5.0, dense_oracle),
        ("data projection vs dense solve", 5.0, projection),
        ("zero-order-hold discretization", 1.0, zoh),
        ("scan equivalence and cross-scan paths", 10.0, scan_equivalence),
        ("gradient suite", 60.0, gradients),
        ("desk-scale training", 900.0, desk_training),
        ("shared weights across stages", f64::INFINITY, shared_weights),
        ("scaling benchmark", 120.0, scaling),
        ("metric sanity", 5.0, metric_sanity),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok((ok, detail)) => (ok && secs <= *budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let budget_note =
            if budget.is_finite() { format!("{secs:.2} s of {budget} s") } else { format!("{secs:.2} s") };
        println!("criterion {} {}: {name}: {detail} ({budget_note})", i + 1, if ok { "PASS" } else { "FAIL" });
        failures += usize::from(!ok);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
