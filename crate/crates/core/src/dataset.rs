//! Synthetic hyperspectral scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cassi::HsiCube;
use crate::error::{Error, Result};

/// Smooth random cubes: sums of 2-D Gaussian blobs, each with a quadratic
/// spectrum over normalised wavelength, min-max scaled to `[0, 1]`.
/// Identical arguments give bit-identical cubes.
pub fn synth_dataset(count: usize, height: usize, width: usize, bands: usize, seed: u64) -> Result<Vec<HsiCube>> {
    if height == 0 || width == 0 || bands == 0 {
        return Err(Error::invalid("synth_dataset", "extents must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synth_cube(&mut rng, height, width, bands)).collect()
}

fn synth_cube<R: Rng>(rng: &mut R, h: usize, w: usize, bands: usize) -> Result<HsiCube> {
    let blobs = rng.random_range(4..10);
    let scale = h.min(w) as f64;
    let mut values = vec![0.0; h * w * bands];
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let sy = rng.random_range(0.06..0.3) * scale;
        let sx = rng.random_range(0.06..0.3) * scale;
        let amp = rng.random_range(0.3..1.0);
        // spectrum c0 + c1 λ + c2 λ², kept positive
        let c = [rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let spectrum: Vec<f64> = (0..bands)
            .map(|b| {
                let l = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.0 };
                (c[0] + c[1] * l + c[2] * l * l).max(0.05)
            })
            .collect();
        for r in 0..h {
            let dy = (r as f64 - cy) / sy;
            for col in 0..w {
                let dx = (col as f64 - cx) / sx;
                let g = amp * (-0.5 * (dx * dx + dy * dy)).exp();
                if g < 1e-6 {
                    continue;
                }
                let px = &mut values[(r * w + col) * bands..][..bands];
                for (v, s) in px.iter_mut().zip(&spectrum) {
                    *v += g * s;
                }
            }
        }
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    values.iter_mut().for_each(|v| *v = (*v - lo) / span);
    HsiCube::new(h, w, bands, values)
}

/// Pearson correlation between two equally long series.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalised_and_deterministic() {
        let a = synth_dataset(3, 16, 16, 4, 5).unwrap();
        let b = synth_dataset(3, 16, 16, 4, 5).unwrap();
        assert_eq!(a, b);
        for c in &a {
            assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn adjacent_bands_correlate() {
        let cubes = synth_dataset(8, 32, 32, 4, 1).unwrap();
        let mut total = 0.0;
        let mut n = 0;
        for c in &cubes {
            for b in 0..c.bands - 1 {
                total += correlation(&c.band(b), &c.band(b + 1));
                n += 1;
            }
        }
        assert!(total / n as f64 > 0.5);
    }
}
