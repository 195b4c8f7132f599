//! Oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use dhm::cassi::{HsiCube, Mask, Measurement, SensingOperator, DENSE_CAP};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    Mask::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn random_cube(rng: &mut ChaCha8Rng, h: usize, w: usize, n: usize) -> HsiCube {
    HsiCube::new(h, w, n, (0..h * w * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn random_measurement(rng: &mut ChaCha8Rng, op: &SensingOperator) -> Measurement {
    let (h, w) = (op.height(), op.shifted_width());
    Measurement::new(h, w, (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `|⟨Ψx, y⟩ − ⟨x, Ψᵀy⟩| / (‖Ψx‖‖y‖ + ‖x‖‖Ψᵀy‖)` for sheared `x`.
pub fn adjoint_defect(op: &SensingOperator, x: &HsiCube, y: &Measurement) -> f64 {
    let px = op.forward_project(x).unwrap();
    let aty = op.adjoint_project(y).unwrap();
    let lhs = dot(&px.values, &y.values);
    let rhs = dot(&x.values, &aty.values);
    (lhs - rhs).abs() / (norm(&px.values) * norm(&y.values) + norm(&x.values) * norm(&aty.values))
}

/// Max deviation of forward, adjoint and `ψ` from the materialised matrix,
/// plus the largest off-diagonal of `ΦΦᵀ`.
pub fn dense_deviation(rng: &mut ChaCha8Rng, op: &SensingOperator) -> (f64, f64) {
    let phi = op.materialize_dense(DENSE_CAP).unwrap();
    let x = random_cube(rng, op.height(), op.shifted_width(), op.bands());
    let y = random_measurement(rng, op);
    let mut worst = 0.0f64;
    let fx = op.forward_project(&x).unwrap().values;
    for (a, b) in fx.iter().zip(phi.matvec(&x.values)) {
        worst = worst.max((a - b).abs());
    }
    let aty = op.adjoint_project(&y).unwrap().values;
    for (a, b) in aty.iter().zip(phi.transpose_matvec(&y.values)) {
        worst = worst.max((a - b).abs());
    }
    let mut off = 0.0f64;
    for i in 0..phi.rows {
        for j in 0..phi.rows {
            let g: f64 = (0..phi.cols).map(|c| phi.at(i, c) * phi.at(j, c)).sum();
            if i == j {
                worst = worst.max((g - op.psi_diag()[i]).abs());
            } else {
                off = off.max(g.abs());
            }
        }
    }
    (worst, off)
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap();
        for k in 0..n {
            a.swap(col * n + k, piv * n + k);
        }
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    x
}

/// `(ΦᵀΦ + ηI)⁻¹ (Φᵀ y + η z)` with the materialised operator.
pub fn dense_projection(op: &SensingOperator, z: &[f64], y: &[f64], eta: f64) -> Vec<f64> {
    let phi = op.materialize_dense(DENSE_CAP).unwrap();
    let n = phi.cols;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..phi.rows).map(|r| phi.at(r, i) * phi.at(r, j)).sum::<f64>();
        }
        a[i * n + i] += eta;
    }
    let aty = phi.transpose_matvec(y);
    let rhs = aty.iter().zip(z).map(|(p, q)| p + eta * q).collect();
    solve(a, rhs)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / norm(b).max(f64::MIN_POSITIVE)
}

/// Σ_{n<terms} x^n / n!
pub fn taylor_exp(x: f64, terms: usize) -> f64 {
    let (mut sum, mut term) = (0.0, 1.0);
    for n in 0..terms {
        sum += term;
        term *= x / (n + 1) as f64;
    }
    sum
}

/// Σ_{n<terms} x^n / (n+1)!
pub fn taylor_expm1_ratio(x: f64, terms: usize) -> f64 {
    let (mut sum, mut term) = (0.0, 1.0);
    for n in 0..terms {
        sum += term;
        term *= x / (n + 2) as f64;
    }
    sum
}

/// Direct loop evaluation of the selective-scan recurrence.
pub fn scan_oracle(
    (g, l, d, ds): (usize, usize, usize, usize),
    u: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    nu: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; g * l * d];
    for gi in 0..g {
        for j in 0..d {
            let mut h = vec![0.0; ds];
            for k in 0..l {
                let row = gi * l + k;
                let uv = u[row * d + j];
                let mut acc = nu[j] * uv;
                for s in 0..ds {
                    let i = (row * d + j) * ds + s;
                    h[s] = a[i] * h[s] + b[i] * uv;
                    acc += c[row * ds + s] * h[s];
                }
                y[row * d + j] = acc;
            }
        }
    }
    y
}

/// PSNR straight from its definition.
pub fn psnr_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

/// SSIM of one plane with a direct (non-separable) 11×11 Gaussian window
/// over the valid region.
pub fn ssim_plane_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / total;
                    let (x, y) = (a[(r + i) * w + c + j], b[(r + i) * w + c + j]);
                    ma += k * x;
                    mb += k * y;
                    saa += k * x * x;
                    sbb += k * y * y;
                    sab += k * x * y;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}
