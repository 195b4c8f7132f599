mod common;

use common::{psnr_oracle, random_cube, ssim_plane_oracle};
use dhm::cassi::HsiCube;
use dhm::metrics::{psnr, ssim, EvalReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn psnr_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let a = random_cube(&mut rng, 6, 7, 3);
        let b = random_cube(&mut rng, 6, 7, 3);
        assert!((psnr(&a, &b, 1.0).unwrap() - psnr_oracle(&a.values, &b.values)).abs() < 1e-9);
    }
    let a = random_cube(&mut rng, 2, 2, 1);
    assert!(psnr(&a, &random_cube(&mut rng, 2, 3, 1), 1.0).is_err());
}

#[test]
fn psnr_falls_as_noise_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_cube(&mut rng, 16, 16, 4);
    let mut last = f64::INFINITY;
    for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let n = Normal::new(0.0, sigma).unwrap();
        let b = HsiCube { values: a.values.iter().map(|v| v + n.sample(&mut rng)).collect(), ..a.clone() };
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn ssim_matches_direct_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_cube(&mut rng, 14, 17, 2);
    let b = random_cube(&mut rng, 14, 17, 2);
    let want = (0..2).map(|k| ssim_plane_oracle(&a.band(k), &b.band(k), 14, 17)).sum::<f64>() / 2.0;
    assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
}

#[test]
fn ssim_identity_symmetry_and_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let a = random_cube(&mut rng, 12, 12, 2);
        let b = random_cube(&mut rng, 12, 12, 2);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!((ab - ba).abs() <= 1e-12);
        assert!((-1.0..=1.0 + 1e-9).contains(&ab));
    }
}

#[test]
fn inverted_checkerboard_scores_low() {
    let (h, w) = (16, 16);
    let a = HsiCube::new(h, w, 1, (0..h * w).map(|i| ((i / w + i % w) % 2) as f64).collect()).unwrap();
    let b = HsiCube { values: a.values.iter().map(|v| 1.0 - v).collect(), ..a.clone() };
    let s = ssim(&a, &b).unwrap();
    assert!(s < 0.5, "{s}");
    assert!((s - ssim_plane_oracle(&a.values, &b.values, h, w)).abs() < 1e-12);
}

#[test]
fn report_serialisations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = vec![random_cube(&mut rng, 11, 11, 1)];
    let recon = vec![truth[0].clone()];
    let mut r = EvalReport::score(&["a".into()], &recon, &truth).unwrap();
    r.fingerprint = "00ff".into();
    assert!(r.mean_psnr().is_infinite());
    assert_eq!(r.to_tsv().lines().count(), 3);
    assert!(r.to_tsv().starts_with("scene\tpsnr_db\tssim\n"));
    let kv = r.to_kv();
    assert!(kv.contains("mean_ssim = 1.000000") && kv.contains("config_fingerprint = 00ff"));
}
