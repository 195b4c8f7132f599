//! Reconstruction quality metrics and evaluation reports.

use std::fmt::Write as _;

use crate::cassi::HsiCube;
use crate::error::{Error, Result};

fn check_dims(a: &HsiCube, b: &HsiCube, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, &a.dims(), &b.dims()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all voxels; `+∞` when the cubes
/// are identical.
pub fn psnr(a: &HsiCube, b: &HsiCube, peak: f64) -> Result<f64> {
    check_dims(a, b, "psnr")?;
    let mse = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.values.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region of a `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            rows[r * wo + c] = (0..k).map(|i| g[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            out[r * wo + c] = (0..k).map(|i| g[i] * rows[(r + i) * wo + c]).sum();
        }
    }
    out
}

/// Mean structural similarity of one band pair (`h × w`, dynamic range 1).
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g = gaussian_window();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&prod(a, a), h, w, &g);
    let bb = filter_valid(&prod(b, b), h, w, &g);
    let ab = filter_valid(&prod(a, b), h, w, &g);
    let n = mu_a.len();
    (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum::<f64>()
        / n as f64
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K₁ = 0.01`, `K₂ = 0.03`, computed per band and averaged.
pub fn ssim(a: &HsiCube, b: &HsiCube) -> Result<f64> {
    check_dims(a, b, "ssim")?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("extents {}×{} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window", a.height, a.width),
        ));
    }
    let total: f64 = (0..a.bands).map(|band| ssim_plane(&a.band(band), &b.band(band), a.height, a.width)).sum();
    Ok(total / a.bands as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-scene scores with averages, wall time and the configuration hash.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub scenes: Vec<SceneScore>,
    pub runtime_s: f64,
    pub fingerprint: String,
}

impl EvalReport {
    /// Scores `recon` against `truth`, pairwise.
    pub fn score(names: &[String], recon: &[HsiCube], truth: &[HsiCube]) -> Result<Self> {
        let scenes = names
            .iter()
            .zip(recon.iter().zip(truth))
            .map(|(n, (r, t))| Ok(SceneScore { name: n.clone(), psnr: psnr(r, t, 1.0)?, ssim: ssim(r, t)? }))
            .collect::<Result<_>>()?;
        Ok(EvalReport { scenes, ..Default::default() })
    }

    pub fn mean_psnr(&self) -> f64 {
        self.scenes.iter().map(|s| s.psnr).sum::<f64>() / self.scenes.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.scenes.iter().map(|s| s.ssim).sum::<f64>() / self.scenes.len().max(1) as f64
    }

    /// `scene  psnr  ssim` rows followed by a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("scene\tpsnr_db\tssim\n");
        for sc in &self.scenes {
            let _ = writeln!(s, "{}\t{:.4}\t{:.6}", sc.name, sc.psnr, sc.ssim);
        }
        let _ = writeln!(s, "mean\t{:.4}\t{:.6}", self.mean_psnr(), self.mean_ssim());
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenes = {}", self.scenes.len());
        let _ = writeln!(s, "mean_psnr_db = {:.6}", self.mean_psnr());
        let _ = writeln!(s, "mean_ssim = {:.6}", self.mean_ssim());
        let _ = writeln!(s, "runtime_s = {:.3}", self.runtime_s);
        let _ = writeln!(s, "config_fingerprint = {}", self.fingerprint);
        for sc in &self.scenes {
            let _ = writeln!(s, "psnr_db.{} = {:.6}", sc.name, sc.psnr);
            let _ = writeln!(s, "ssim.{} = {:.6}", sc.name, sc.ssim);
        }
        s
    }
}
