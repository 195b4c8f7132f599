//! Coded-aperture snapshot spectral imaging forward model.
//!
//! A cube of `N` bands is sheared along the width axis (band `ω` moves right
//! by `shift * ω` pixels), modulated by the correspondingly shifted coded
//! mask and summed over bands onto a single `H × W*` detector frame with
//! `W* = W + shift * (N - 1)`.
//!
//! The sensing matrix acts on the sheared `H × W* × N` volume. Every detector
//! pixel reads a disjoint set of volume entries, so `Ψ Ψᵀ` is diagonal with
//! entries `ψ = Σ_ω mask_ω²`; nothing here ever builds `Ψ` except
//! [`SensingOperator::materialize_dense`], which exists for testing.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};

/// Hyperspectral volume stored pixel-major: `values[(r * width + c) * bands + ω]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub values: Vec<f64>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::invalid("HsiCube", "all extents must be at least 1"));
        }
        if values.len() != height * width * bands {
            return Err(Error::shape("HsiCube", &[height, width, bands], &[values.len()]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("HsiCube", "non-finite value"));
        }
        Ok(HsiCube { height, width, bands, values })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        HsiCube { height, width, bands, values: vec![0.0; height * width * bands] }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.bands]
    }

    #[inline]
    pub fn index(&self, r: usize, c: usize, band: usize) -> usize {
        (r * self.width + c) * self.bands + band
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, band: usize) -> f64 {
        self.values[self.index(r, c, band)]
    }

    /// Plane of one band, row-major.
    pub fn band(&self, band: usize) -> Vec<f64> {
        self.values.iter().skip(band).step_by(self.bands).copied().collect()
    }

    /// Top-left `height × width` window starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::invalid(
                "crop",
                format!("{height}x{width} at ({row},{col}) exceeds {}x{}", self.height, self.width),
            ));
        }
        let mut values = Vec::with_capacity(height * width * self.bands);
        for r in row..row + height {
            let start = self.index(r, col, 0);
            values.extend_from_slice(&self.values[start..start + width * self.bands]);
        }
        Ok(HsiCube { height, width, bands: self.bands, values })
    }
}

/// Coded aperture transmittance, row-major `H × W`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Mask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("Mask", &[height, width], &[values.len()]));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("Mask", "values must lie in [0, 1]"));
        }
        Ok(Mask { height, width, values })
    }

    /// I.i.d. Bernoulli(0.5) binary mask.
    pub fn random_binary<R: Rng>(height: usize, width: usize, rng: &mut R) -> Self {
        let values = (0..height * width).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        Mask { height, width, values }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Mask { height, width, values: vec![1.0; height * width] }
    }
}

/// Noise applied to a synthesized measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum NoiseModel {
    #[default]
    None,
    /// Additive i.i.d. `N(0, sigma²)`.
    Gaussian { sigma: f64 },
    /// Photon noise: the frame is scaled so its peak maps to
    /// `2^bit_depth - 1` counts, Poisson-sampled and scaled back.
    Shot { bit_depth: u32 },
}

impl std::fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseModel::None => write!(f, "none"),
            NoiseModel::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            NoiseModel::Shot { bit_depth } => write!(f, "shot:{bit_depth}"),
        }
    }
}

impl std::str::FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad noise spec `{s}` (none | gaussian:SIGMA | shot:BITS)"));
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "none" if arg.is_empty() => Ok(NoiseModel::None),
            "gaussian" => {
                let sigma: f64 = arg.parse().map_err(|_| bad())?;
                if !(sigma >= 0.0) {
                    return Err(Error::invalid("add_noise", format!("negative sigma {sigma}")));
                }
                Ok(NoiseModel::Gaussian { sigma })
            }
            "shot" => {
                let bit_depth: u32 = arg.parse().map_err(|_| bad())?;
                if bit_depth == 0 || bit_depth > 31 {
                    return Err(Error::invalid("add_noise", format!("bit depth {bit_depth} outside 1..=31")));
                }
                Ok(NoiseModel::Shot { bit_depth })
            }
            _ => Err(bad()),
        }
    }
}

/// Detector frame `H × W*`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub noise: NoiseModel,
}

impl Measurement {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape("Measurement", &[height, width], &[values.len()]));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Measurement", "non-finite value"));
        }
        Ok(Measurement { height, width, values, noise: NoiseModel::None })
    }
}

/// Width of the sheared canvas for `bands` bands of width `width`.
pub fn shifted_width(width: usize, bands: usize, shift: usize) -> usize {
    width + shift * (bands - 1)
}

/// Translates band `ω` right by `shift * ω` into a zero-filled canvas of
/// width `W + shift * (N - 1)`.
pub fn shift_bands(cube: &HsiCube, shift: usize) -> HsiCube {
    let ws = shifted_width(cube.width, cube.bands, shift);
    let mut out = HsiCube::zeros(cube.height, ws, cube.bands);
    for r in 0..cube.height {
        for c in 0..cube.width {
            for b in 0..cube.bands {
                let dst = out.index(r, c + shift * b, b);
                out.values[dst] = cube.get(r, c, b);
            }
        }
    }
    out
}

/// Inverse of [`shift_bands`] on the occupied support: reads band `ω` back
/// from columns `[shift * ω, shift * ω + width)`.
pub fn unshift_bands(volume: &HsiCube, shift: usize, width: usize) -> Result<HsiCube> {
    if shifted_width(width, volume.bands, shift) != volume.width {
        return Err(Error::shape(
            "unshift_bands",
            &[volume.height, volume.width, volume.bands],
            &[volume.height, shifted_width(width, volume.bands, shift), volume.bands],
        ));
    }
    let mut out = HsiCube::zeros(volume.height, width, volume.bands);
    for r in 0..volume.height {
        for c in 0..width {
            for b in 0..volume.bands {
                let dst = out.index(r, c, b);
                out.values[dst] = volume.get(r, c + shift * b, b);
            }
        }
    }
    Ok(out)
}

/// The CASSI sensing operator `Ψ` for a fixed mask, band count and shift.
#[derive(Debug, Clone)]
pub struct SensingOperator {
    mask: Mask,
    shift: usize,
    bands: usize,
    /// Sheared mask stack, `H × W* × N`, same layout as [`HsiCube`].
    shifted_mask: HsiCube,
    psi: Vec<f64>,
}

impl SensingOperator {
    pub fn new(mask: Mask, bands: usize, shift: usize) -> Result<Self> {
        if bands == 0 || mask.height == 0 || mask.width == 0 {
            return Err(Error::invalid("SensingOperator", "empty mask or zero bands"));
        }
        let mut op = SensingOperator { shifted_mask: HsiCube::zeros(1, 1, 1), psi: Vec::new(), mask, shift, bands };
        op.refresh();
        Ok(op)
    }

    fn refresh(&mut self) {
        let planes = HsiCube {
            height: self.mask.height,
            width: self.mask.width,
            bands: self.bands,
            values: self.mask.values.iter().flat_map(|&m| std::iter::repeat_n(m, self.bands)).collect(),
        };
        self.shifted_mask = shift_bands(&planes, self.shift);
        self.psi = self.shifted_mask.values.chunks(self.bands).map(|px| px.iter().map(|m| m * m).sum()).collect();
    }

    pub fn set_mask(&mut self, mask: Mask) {
        self.mask = mask;
        self.refresh();
    }

    pub fn set_shift(&mut self, shift: usize) {
        self.shift = shift;
        self.refresh();
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn shifted_width(&self) -> usize {
        shifted_width(self.mask.width, self.bands, self.shift)
    }

    /// Sheared mask planes, `H × W* × N`.
    pub fn shifted_mask(&self) -> &HsiCube {
        &self.shifted_mask
    }

    /// Diagonal of `Ψ Ψᵀ`, row-major `H × W*`.
    pub fn psi_diag(&self) -> &[f64] {
        &self.psi
    }

    fn check_volume(&self, v: &HsiCube, op: &'static str) -> Result<()> {
        let want = [self.height(), self.shifted_width(), self.bands];
        if v.dims() != want {
            return Err(Error::shape(op, &v.dims(), &want));
        }
        Ok(())
    }

    /// `Ψ x` for a sheared volume `x` (`H × W* × N`).
    pub fn forward_project(&self, volume: &HsiCube) -> Result<Measurement> {
        self.check_volume(volume, "forward_project")?;
        let values = volume
            .values
            .chunks(self.bands)
            .zip(self.shifted_mask.values.chunks(self.bands))
            .map(|(x, m)| x.iter().zip(m).map(|(a, b)| a * b).sum())
            .collect();
        Ok(Measurement { height: self.height(), width: self.shifted_width(), values, noise: NoiseModel::None })
    }

    /// Measurement of an unsheared `H × W × N` scene.
    pub fn measure(&self, cube: &HsiCube) -> Result<Measurement> {
        if cube.dims() != [self.height(), self.width(), self.bands] {
            return Err(Error::shape("measure", &cube.dims(), &[self.height(), self.width(), self.bands]));
        }
        self.forward_project(&shift_bands(cube, self.shift))
    }

    /// `Ψᵀ y`: band `ω` of the result is the sheared mask plane times `y`.
    pub fn adjoint_project(&self, y: &Measurement) -> Result<HsiCube> {
        if (y.height, y.width) != (self.height(), self.shifted_width()) {
            return Err(Error::shape("adjoint_project", &[y.height, y.width], &[self.height(), self.shifted_width()]));
        }
        let mut out = self.shifted_mask.clone();
        for (px, &yv) in out.values.chunks_mut(self.bands).zip(&y.values) {
            px.iter_mut().for_each(|m| *m *= yv);
        }
        Ok(out)
    }

    /// `Ψᵀ (y ⊘ ψ)` with zero where `ψ = 0`; the usual starting estimate.
    pub fn normalized_adjoint(&self, y: &Measurement) -> Result<HsiCube> {
        let scaled = Measurement {
            values: y.values.iter().zip(&self.psi).map(|(&v, &p)| if p > 0.0 { v / p } else { 0.0 }).collect(),
            ..y.clone()
        };
        self.adjoint_project(&scaled)
    }

    /// Dense `ξ × ξN` matrix with `ξ = H W*`, columns indexed like the
    /// sheared volume buffer. Refuses if the matrix would exceed `cap` entries
    /// of the volume (`H · W* · N`).
    pub fn materialize_dense(&self, cap: usize) -> Result<DenseMatrix> {
        let rows = self.height() * self.shifted_width();
        let cols = rows * self.bands;
        if cols > cap {
            return Err(Error::DenseCap { needed: cols, cap });
        }
        let mut data = vec![0.0; rows * cols];
        for p in 0..rows {
            for b in 0..self.bands {
                let col = p * self.bands + b;
                data[p * cols + col] = self.shifted_mask.values[col];
            }
        }
        Ok(DenseMatrix { rows, cols, data })
    }
}

/// Default entry cap for [`SensingOperator::materialize_dense`].
pub const DENSE_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks(self.cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn transpose_matvec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &yv) in self.data.chunks(self.cols).zip(y) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * yv;
            }
        }
        out
    }
}

/// Returns a noisy copy of `y`. Poisson sampling treats negative values as 0.
pub fn add_noise<R: Rng>(y: &Measurement, model: NoiseModel, rng: &mut R) -> Result<Measurement> {
    let values = match model {
        NoiseModel::None => y.values.clone(),
        NoiseModel::Gaussian { sigma } => {
            if !(sigma >= 0.0) {
                return Err(Error::invalid("add_noise", format!("negative sigma {sigma}")));
            }
            if sigma == 0.0 {
                y.values.clone()
            } else {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("add_noise", e.to_string()))?;
                y.values.iter().map(|&v| v + normal.sample(rng)).collect()
            }
        }
        NoiseModel::Shot { bit_depth } => {
            if bit_depth == 0 {
                return Err(Error::invalid("add_noise", "bit depth must be at least 1"));
            }
            let peak = y.values.iter().copied().fold(0.0, f64::max);
            if peak <= 0.0 {
                y.values.clone()
            } else {
                let scale = ((1u64 << bit_depth) - 1) as f64 / peak;
                y.values
                    .iter()
                    .map(|&v| {
                        let lambda = (v * scale).max(0.0);
                        if lambda == 0.0 {
                            return 0.0;
                        }
                        let counts: f64 = Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(0.0);
                        counts / scale
                    })
                    .collect()
            }
        }
    };
    Ok(Measurement { height: y.height, width: y.width, values, noise: model })
}
