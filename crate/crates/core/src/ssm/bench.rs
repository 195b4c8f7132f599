//! Wall-clock harness for the scan kernels.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::{scan_forward, ScanDims, ScanMode};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: ScanMode,
    pub dims: ScanDims,
    pub threads: usize,
    pub ns_per_element: f64,
}

impl BenchRow {
    pub const HEADER: &'static str = "mode\tG\tL\tD\tD_s\tthreads\tns_per_element";

    /// Total time of one scan in seconds.
    pub fn seconds(&self) -> f64 {
        self.ns_per_element * self.dims.elements() as f64 * 1e-9
    }
}

impl fmt::Display for BenchRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.dims;
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.4}",
            self.mode, d.groups, d.len, d.channels, d.state, self.threads, self.ns_per_element
        )
    }
}

struct Inputs {
    u: Vec<f32>,
    a: Vec<f32>,
    b: Vec<f32>,
    c: Vec<f32>,
    nu: Vec<f32>,
}

fn inputs(dims: ScanDims, seed: u64) -> Inputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.elements();
    let gl = dims.groups * dims.len;
    Inputs {
        u: (0..gl * dims.channels).map(|_| rng.random_range(-1.0..1.0)).collect(),
        a: (0..n).map(|_| rng.random_range(0.5..1.0)).collect(),
        b: (0..n).map(|_| rng.random_range(-0.5..0.5)).collect(),
        c: (0..gl * dims.state).map(|_| rng.random_range(-1.0..1.0)).collect(),
        nu: vec![1.0; dims.channels],
    }
}

/// Best-of-`repeats` forward scan time on a pool of `threads` workers.
/// Inputs are `f32`; states are not retained.
pub fn time_scan(dims: ScanDims, mode: ScanMode, threads: usize, repeats: usize, seed: u64) -> Result<BenchRow> {
    if dims.elements() == 0 {
        return Err(Error::invalid("bench", "empty scan"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid("bench", e.to_string()))?;
    let x = inputs(dims, seed);
    let best = pool.install(|| {
        (0..repeats.max(1))
            .map(|_| {
                let t = Instant::now();
                let (y, _) = scan_forward(dims, &x.u, &x.a, &x.b, &x.c, &x.nu, mode, false);
                let dt = t.elapsed().as_secs_f64();
                std::hint::black_box(y);
                dt
            })
            .fold(f64::INFINITY, f64::min)
    });
    Ok(BenchRow { mode, dims, threads: threads.max(1), ns_per_element: best * 1e9 / dims.elements() as f64 })
}

/// Sequence lengths `2¹⁰ … 2¹⁸` of the scaling sweep.
pub fn default_lengths() -> Vec<usize> {
    (10..=18).map(|e| 1usize << e).collect()
}

/// Times every mode at every length with `G = 1`.
pub fn sweep(
    modes: &[ScanMode],
    lengths: &[usize],
    channels: usize,
    state: usize,
    threads: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(modes.len() * lengths.len());
    for &mode in modes {
        for &len in lengths {
            let dims = ScanDims { groups: 1, len, channels, state };
            rows.push(time_scan(dims, mode, threads, repeats, seed)?);
        }
    }
    Ok(rows)
}

/// Least-squares slope of `log t` against `log L`.
pub fn loglog_slope(rows: &[BenchRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.dims.len as f64).ln(), r.seconds().ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_linear_data() {
        let rows: Vec<BenchRow> = [1024usize, 2048, 4096]
            .iter()
            .map(|&len| BenchRow {
                mode: ScanMode::Sequential,
                dims: ScanDims { groups: 1, len, channels: 1, state: 1 },
                threads: 1,
                ns_per_element: 3.0,
            })
            .collect();
        assert!((loglog_slope(&rows) - 1.0).abs() < 1e-12);
        assert_eq!(rows[0].to_string(), "seq\t1\t1024\t1\t1\t1\t3.0000");
    }
}
