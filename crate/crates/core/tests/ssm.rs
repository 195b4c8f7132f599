use dhm::autodiff::gradcheck::{check_gradients, Tolerance};
use dhm::ssm::kernel::{scan_forward, ScanDims};
use dhm::ssm::{
    cross_merge, cross_scan, discretize_zoh, generate_params, scan_paths, selective_scan, ssm_forward, ScanLayout,
    ScanMode, SsmParams,
};
use dhm::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn taylor_exp(x: f64, terms: usize) -> f64 {
    let (mut sum, mut term) = (0.0, 1.0);
    for n in 0..terms {
        sum += term;
        term *= x / (n + 1) as f64;
    }
    sum
}

/// Σ_{n<terms} x^n / (n+1)!
fn taylor_expm1_ratio(x: f64, terms: usize) -> f64 {
    let (mut sum, mut term) = (0.0, 1.0);
    for n in 0..terms {
        sum += term;
        term *= x / (n + 2) as f64;
    }
    sum
}

#[test]
fn zoh_matches_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (g, l, d, ds) = (2, 5, 3, 4);
    let a = rand_vec(&mut rng, d * ds, -1.0, -1e-2);
    let b = rand_vec(&mut rng, g * l * ds, -2.0, 2.0);
    let dt = rand_vec(&mut rng, g * l * d, 1e-3, 3.0);
    let at = Tensor::from_vec(a.clone(), &[d, ds]).unwrap();
    let bt = Tensor::from_vec(b.clone(), &[g, l, ds]).unwrap();
    let dtt = Tensor::from_vec(dt.clone(), &[g, l, d]).unwrap();
    let (ab, bb) = discretize_zoh(&at, &bt, &dtt).unwrap();
    assert_eq!(ab.shape(), &[g, l, d, ds]);
    let (ab, bb) = (ab.to_vec(), bb.to_vec());
    for row in 0..g * l {
        for j in 0..d {
            for s in 0..ds {
                let x = dt[row * d + j] * a[j * ds + s];
                let i = (row * d + j) * ds + s;
                let want_a = taylor_exp(x, 30);
                let want_b = dt[row * d + j] * taylor_expm1_ratio(x, 30) * b[row * ds + s];
                assert!((ab[i] - want_a).abs() <= 1e-10 * want_a.abs());
                assert!((bb[i] - want_b).abs() <= 1e-10 * want_b.abs().max(1e-300));
            }
        }
    }
}

#[test]
fn zoh_small_step_limit() {
    let a = Tensor::from_vec(vec![-0.7, -1.0, -0.01], &[1, 3]).unwrap();
    let b = Tensor::from_vec(vec![1.5, -2.0, 0.3], &[1, 1, 3]).unwrap();
    let dt = Tensor::from_vec(vec![1e-8], &[1, 1, 1]).unwrap();
    let (_, bb) = discretize_zoh(&a, &b, &dt).unwrap();
    for (v, bv) in bb.to_vec().iter().zip([1.5f64, -2.0, 0.3]) {
        assert!((v / (1e-8 * bv) - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn zoh_decay_is_monotone_in_step() {
    let a = Tensor::from_vec(vec![-0.5], &[1, 1]).unwrap();
    let b = Tensor::from_vec(vec![1.0; 4], &[1, 4, 1]).unwrap();
    let dt = Tensor::from_vec(vec![0.1, 0.2, 0.4, 0.8], &[1, 4, 1]).unwrap();
    let ab = discretize_zoh(&a, &b, &dt).unwrap().0.to_vec();
    assert!(ab.windows(2).all(|w| w[1] < w[0] && w[0] < 1.0));
}

/// Unvectorised reference: explicit loops over g, d, s, k.
fn scan_oracle(dims: ScanDims, u: &[f64], a: &[f64], b: &[f64], c: &[f64], nu: &[f64]) -> Vec<f64> {
    let ScanDims { groups, len, channels, state } = dims;
    let mut y = vec![0.0; groups * len * channels];
    for g in 0..groups {
        for d in 0..channels {
            let mut h = vec![0.0; state];
            for k in 0..len {
                let uk = u[(g * len + k) * channels + d];
                let mut out = nu[d] * uk;
                for s in 0..state {
                    let i = ((g * len + k) * channels + d) * state + s;
                    h[s] = a[i] * h[s] + b[i] * uk;
                    out += c[(g * len + k) * state + s] * h[s];
                }
                y[(g * len + k) * channels + d] = out;
            }
        }
    }
    y
}

fn random_scan(rng: &mut ChaCha8Rng, dims: ScanDims) -> [Vec<f64>; 5] {
    let gl = dims.groups * dims.len;
    [
        rand_vec(rng, gl * dims.channels, -1.0, 1.0),
        rand_vec(rng, dims.elements(), 0.0, 1.0),
        rand_vec(rng, dims.elements(), -1.0, 1.0),
        rand_vec(rng, gl * dims.state, -1.0, 1.0),
        rand_vec(rng, dims.channels, -1.0, 1.0),
    ]
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn sequential_scan_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = ScanDims { groups: 2, len: 16, channels: 3, state: 4 };
    let [u, a, b, c, nu] = random_scan(&mut rng, dims);
    let want = scan_oracle(dims, &u, &a, &b, &c, &nu);
    for mode in [ScanMode::Sequential, ScanMode::Parallel] {
        let (y, _) = scan_forward(dims, &u, &a, &b, &c, &nu, mode, false);
        assert!(max_rel(&y, &want) <= 1e-12, "{mode}");
    }
}

#[test]
fn single_step_scan() {
    let dims = ScanDims { groups: 1, len: 1, channels: 1, state: 2 };
    let (u, a, b, c, nu) = ([2.0], [0.9, 0.3], [0.5, -1.0], [1.0, 3.0], [0.5]);
    for mode in [ScanMode::Sequential, ScanMode::Parallel] {
        let (y, _) = scan_forward(dims, &u, &a, &b, &c, &nu, mode, false);
        assert_eq!(y, vec![1.0 * 1.0 + 3.0 * -2.0 + 1.0]);
    }
}

#[test]
fn parallel_matches_sequential_in_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let dims = ScanDims {
            groups: rng.random_range(1..4),
            len: rng.random_range(1..300),
            channels: rng.random_range(1..5),
            state: rng.random_range(1..5),
        };
        let v: Vec<Vec<f32>> =
            random_scan(&mut rng, dims).iter().map(|x| x.iter().map(|&e| e as f32).collect()).collect();
        let (s, _) = scan_forward(dims, &v[0], &v[1], &v[2], &v[3], &v[4], ScanMode::Sequential, false);
        let (p, _) = scan_forward(dims, &v[0], &v[1], &v[2], &v[3], &v[4], ScanMode::Parallel, false);
        let scale = s.iter().fold(0.0f32, |m, x| m.max(x.abs())).max(f32::MIN_POSITIVE);
        let err = s.iter().zip(&p).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max) / scale;
        assert!(err <= 1e-6, "{dims:?}: {err}");
    }
}

#[test]
fn stored_states_are_geometrically_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = ScanDims { groups: 1, len: 400, channels: 2, state: 3 };
    let [u, mut a, b, c, nu] = random_scan(&mut rng, dims);
    a.iter_mut().for_each(|v| *v *= 0.9);
    let (_, h) = scan_forward(dims, &u, &a, &b, &c, &nu, ScanMode::Sequential, true);
    let bound = b.iter().fold(0.0f64, |m, v| m.max(v.abs())) / (1.0 - 0.9);
    assert!(h.unwrap().iter().all(|v| v.abs() <= bound));
}

#[test]
fn scan_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dims = ScanDims { groups: 2, len: 6, channels: 2, state: 3 };
    let [u, a, b, c, nu] = random_scan(&mut rng, dims);
    let shape4 = [dims.groups, dims.len, dims.channels, dims.state];
    let weights = Tensor::from_vec(rand_vec(&mut rng, 24, -1.0, 1.0), &[2, 6, 2]).unwrap();
    for mode in [ScanMode::Sequential, ScanMode::Parallel] {
        let params = [
            Tensor::parameter(u.clone(), &[2, 6, 2], "u").unwrap(),
            Tensor::parameter(a.clone(), &shape4, "a_bar").unwrap(),
            Tensor::parameter(b.clone(), &shape4, "b_bar").unwrap(),
            Tensor::parameter(c.clone(), &[2, 6, 3], "c").unwrap(),
            Tensor::parameter(nu.clone(), &[2], "nu").unwrap(),
        ];
        let f = || {
            let y = selective_scan(&params[0], &params[1], &params[2], &params[3], &params[4], mode)?;
            y.mul(&weights)?.sum_all()
        };
        let report = check_gradients(&params, f, &Tolerance::default(), None, 0).unwrap();
        assert!(report.passed(&Tolerance::default()), "{mode}: {report:?}");
    }
}

#[test]
fn full_ssm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = SsmParams::<f64>::init(&mut rng, 3, 2, "ssm").unwrap();
    // larger projections so every path carries signal
    for t in [&p.p_b, &p.p_c, &p.p_delta] {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
    }
    let s = Tensor::parameter(rand_vec(&mut rng, 2 * 5 * 3, -1.0, 1.0), &[2, 5, 3], "s").unwrap();
    let mut params = p.tensors();
    params.push(s.clone());
    let f = || ssm_forward(&s, &p, ScanMode::Parallel)?.square()?.sum_all();
    let report = check_gradients(&params, f, &Tolerance::default(), None, 0).unwrap();
    assert!(report.passed(&Tolerance::default()), "{report:?}");
}

#[test]
fn generate_params_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (g, l, d, ds) = (2, 3, 4, 2);
    let p = SsmParams::<f64>::init(&mut rng, d, ds, "ssm").unwrap();
    let sv = rand_vec(&mut rng, g * l * d, -1.0, 1.0);
    let s = Tensor::from_vec(sv.clone(), &[g, l, d]).unwrap();
    let (b, c, delta) = generate_params(&s, &p).unwrap();
    let (pb, pc, pd, e) = (p.p_b.to_vec(), p.p_c.to_vec(), p.p_delta.to_vec(), p.e.to_vec());
    for row in 0..g * l {
        for j in 0..ds {
            let wb: f64 = (0..d).map(|i| sv[row * d + i] * pb[i * ds + j]).sum();
            let wc: f64 = (0..d).map(|i| sv[row * d + i] * pc[i * ds + j]).sum();
            assert!((b.data()[row * ds + j] - wb).abs() < 1e-14);
            assert!((c.data()[row * ds + j] - wc).abs() < 1e-14);
        }
        for j in 0..d {
            let z: f64 = e[j] + (0..d).map(|i| sv[row * d + i] * pd[i * d + j]).sum::<f64>();
            let want = z.max(0.0) + (-z.abs()).exp().ln_1p();
            assert!((delta.data()[row * d + j] - want).abs() < 1e-14);
            assert!(delta.data()[row * d + j] > 0.0);
        }
    }
}

#[test]
fn local_windows_match_partition_oracle() {
    let p = scan_paths(4, 4, ScanLayout::Local(2)).unwrap();
    for g in 0..4 {
        let (wr, wc) = (g / 2, g % 2);
        let mut members: Vec<usize> = p[0][g * 4..(g + 1) * 4].to_vec();
        members.sort();
        let mut want: Vec<usize> = (0..4).map(|k| (wr * 2 + k / 2) * 4 + wc * 2 + k % 2).collect();
        want.sort();
        assert_eq!(members, want);
    }
}

#[test]
fn merge_with_only_first_path_unscrambles() {
    let f: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let t = Tensor::from_vec(f.clone(), &[2, 3, 2]).unwrap();
    let seqs = cross_scan(&t, ScanLayout::Global).unwrap();
    let zero = Tensor::zeros(seqs[0].shape());
    let merged = cross_merge(&[seqs[0].clone(), zero.clone(), zero.clone(), zero], 2, 3, ScanLayout::Global).unwrap();
    assert_eq!(merged.to_vec(), f);
}

#[test]
fn one_pixel_paths_coincide() {
    let p = scan_paths(1, 1, ScanLayout::Global).unwrap();
    assert!(p.iter().all(|x| x == &vec![0]));
}

proptest! {
    #[test]
    fn paths_are_permutations(h in 1usize..6, w in 1usize..6, n in 1usize..3) {
        let layouts = [ScanLayout::Global, ScanLayout::Local(n)];
        for layout in layouts {
            let (hh, ww) = (h * n, w * n);
            for p in scan_paths(hh, ww, layout).unwrap() {
                let mut s = p.clone();
                s.sort();
                prop_assert_eq!(s, (0..hh * ww).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn scan_merge_round_trip_is_exact(h in 1usize..4, w in 1usize..4, d in 1usize..3, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hh, ww) = (2 * h, 2 * w);
        let f = rand_vec(&mut rng, hh * ww * d, -1.0, 1.0);
        let t = Tensor::from_vec(f.clone(), &[hh, ww, d]).unwrap();
        for layout in [ScanLayout::Global, ScanLayout::Local(2)] {
            let merged = cross_merge(&cross_scan(&t, layout).unwrap(), hh, ww, layout).unwrap();
            let back: Vec<f64> = merged.to_vec().iter().map(|v| v / 4.0).collect();
            prop_assert_eq!(&back, &f);
        }
    }
}
