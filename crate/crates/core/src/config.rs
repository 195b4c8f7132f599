//! Flat `key = value` configuration shared by the library and the CLI.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Unknown keys are rejected and later assignments override
//! earlier ones. The special key `preset` (`desk` or `full_size`) resets every
//! field to that preset before the following lines apply.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::cassi::NoiseModel;
use crate::error::{Error, Result};
use crate::scalar::DType;
use crate::ssm::ScanMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Global and local state-space branches in every block.
    Full,
    /// Global branch only.
    Light,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockOrder {
    GlobalFirst,
    LocalFirst,
}

/// Denoiser hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DhmConfig {
    /// Base width `C`; levels use `C`, `2C`, `4C`, ...
    pub channels: usize,
    /// Local window side `N`.
    pub window: usize,
    /// Encoder/decoder levels `N₁`.
    pub depth: usize,
    /// Bottleneck blocks `N₂`.
    pub bottleneck: usize,
    /// State size `D_s`.
    pub state: usize,
    pub bands: usize,
    pub variant: Variant,
    pub block_order: BlockOrder,
    /// One parameter set for all four scan directions instead of four.
    pub share_directions: bool,
    pub ffn_expansion: usize,
    pub scan_mode: ScanMode,
}

impl DhmConfig {
    /// Spatial extents must be multiples of this at the input.
    pub fn spatial_multiple(&self) -> usize {
        self.window << self.depth
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.channels << level
    }

    /// Same configuration without the local branch.
    pub fn light(&self) -> DhmConfig {
        DhmConfig { variant: Variant::Light, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("window", self.window),
            ("state", self.state),
            ("bands", self.bands),
            ("ffn_expansion", self.ffn_expansion),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be at least 1")));
            }
        }
        if self.depth == 0 || self.bottleneck == 0 {
            return Err(Error::Config("depth and bottleneck must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stage-loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldConfig {
    pub stages: usize,
    /// Width of the parameter learner's head in stage pairs; stages use the
    /// first `stages` pairs, so the weight count does not depend on
    /// `stages`.
    pub max_stages: usize,
    /// Dispersion step `δs` in pixels per band.
    pub shift: usize,
    pub learnable_eta: bool,
    pub learnable_rho: bool,
    /// Values used for `η` / `ρ` when they are not learned.
    pub eta: f64,
    pub rho: f64,
    /// Zero-pad the sheared canvas up to a multiple of
    /// [`DhmConfig::spatial_multiple`] inside the denoiser; without it,
    /// indivisible extents are an error.
    pub pad: bool,
}

/// Training loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Adam steps; ignored when `epochs` is non-zero.
    pub steps: usize,
    /// Passes over the training set, one cube per step.
    pub epochs: usize,
    /// Fraction of the run after which the learning rate is halved.
    pub halve_at: f64,
    pub crop: usize,
    pub cube_size: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub noise: NoiseModel,
    pub seed: u64,
    pub dtype: DType,
    pub log_every: usize,
    pub val_every: usize,
}

impl TrainConfig {
    pub fn total_steps(&self) -> usize {
        if self.epochs > 0 {
            self.epochs * self.train_count
        } else {
            self.steps
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub net: DhmConfig,
    pub unfold: UnfoldConfig,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config::desk()
    }
}

const KEYS: &[&str] = &[
    "preset",
    "channels",
    "window",
    "depth",
    "bottleneck",
    "state",
    "bands",
    "variant",
    "block_order",
    "share_directions",
    "ffn_expansion",
    "scan_mode",
    "stages",
    "max_stages",
    "shift",
    "learnable_eta",
    "learnable_rho",
    "eta",
    "rho",
    "pad",
    "lr",
    "steps",
    "epochs",
    "halve_at",
    "crop",
    "cube_size",
    "train_count",
    "val_count",
    "noise",
    "seed",
    "dtype",
    "log_every",
    "val_every",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}` (expected true/false)"))),
    }
}

impl Config {
    /// Small model trained on 32×32×4 cubes.
    pub fn desk() -> Self {
        Config {
            net: DhmConfig {
                channels: 8,
                window: 4,
                depth: 2,
                bottleneck: 1,
                state: 8,
                bands: 4,
                variant: Variant::Full,
                block_order: BlockOrder::GlobalFirst,
                share_directions: false,
                ffn_expansion: 2,
                scan_mode: ScanMode::Sequential,
            },
            unfold: UnfoldConfig {
                stages: 2,
                max_stages: 9,
                shift: 2,
                learnable_eta: true,
                learnable_rho: true,
                eta: 1.0,
                rho: 1.0,
                pad: true,
            },
            train: TrainConfig {
                lr: 1e-3,
                steps: 500,
                epochs: 0,
                halve_at: 0.6,
                crop: 32,
                cube_size: 32,
                train_count: 64,
                val_count: 16,
                noise: NoiseModel::None,
                seed: 0,
                dtype: DType::F32,
                log_every: 50,
                val_every: 0,
            },
        }
    }

    /// Full-size settings: 28 bands, `C = 28`, `N = 8`, 256² crops.
    pub fn full_size() -> Self {
        let mut c = Config::desk();
        c.net.channels = 28;
        c.net.window = 8;
        c.net.state = 28;
        c.net.bands = 28;
        c.unfold.stages = 9;
        c.train.crop = 256;
        c.train.cube_size = 256;
        c.train.epochs = 300;
        c
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (n, u, t) = (&mut self.net, &mut self.unfold, &mut self.train);
        match key.trim() {
            "preset" => {
                *self = match v {
                    "desk" => Config::desk(),
                    "full_size" => Config::full_size(),
                    _ => return Err(Error::Config(format!("unknown preset `{v}` (desk | full_size)"))),
                }
            }
            "channels" => n.channels = parse(key, v)?,
            "window" => n.window = parse(key, v)?,
            "depth" => n.depth = parse(key, v)?,
            "bottleneck" => n.bottleneck = parse(key, v)?,
            "state" => n.state = parse(key, v)?,
            "bands" => n.bands = parse(key, v)?,
            "variant" => {
                n.variant = match v {
                    "full" => Variant::Full,
                    "light" => Variant::Light,
                    _ => return Err(Error::Config(format!("invalid value `{v}` for `variant` (full | light)"))),
                }
            }
            "block_order" => {
                n.block_order = match v {
                    "gs_ls" => BlockOrder::GlobalFirst,
                    "ls_gs" => BlockOrder::LocalFirst,
                    _ => return Err(Error::Config(format!("invalid value `{v}` for `block_order` (gs_ls | ls_gs)"))),
                }
            }
            "share_directions" => n.share_directions = parse_bool(key, v)?,
            "ffn_expansion" => n.ffn_expansion = parse(key, v)?,
            "scan_mode" => n.scan_mode = v.parse()?,
            "stages" => u.stages = parse(key, v)?,
            "max_stages" => u.max_stages = parse(key, v)?,
            "shift" => u.shift = parse(key, v)?,
            "learnable_eta" => u.learnable_eta = parse_bool(key, v)?,
            "learnable_rho" => u.learnable_rho = parse_bool(key, v)?,
            "eta" => u.eta = parse(key, v)?,
            "rho" => u.rho = parse(key, v)?,
            "pad" => u.pad = parse_bool(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "steps" => t.steps = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "halve_at" => t.halve_at = parse(key, v)?,
            "crop" => t.crop = parse(key, v)?,
            "cube_size" => t.cube_size = parse(key, v)?,
            "train_count" => t.train_count = parse(key, v)?,
            "val_count" => t.val_count = parse(key, v)?,
            "noise" => t.noise = v.parse()?,
            "seed" => t.seed = parse(key, v)?,
            "dtype" => {
                t.dtype = match v {
                    "f32" => DType::F32,
                    "f64" => DType::F64,
                    _ => return Err(Error::Config(format!("invalid value `{v}` for `dtype` (f32 | f64)"))),
                }
            }
            "log_every" => t.log_every = parse(key, v)?,
            "val_every" => t.val_every = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`; known keys: {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// Applies `key=value` (or `key = value`) assignments in order.
    pub fn apply_lines(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{line}`", i + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                e => e,
            })?;
        }
        Ok(())
    }

    /// Desk defaults overridden by `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Config::desk();
        c.apply_lines(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Config::from_text(&std::fs::read_to_string(path)?)
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.unfold.stages == 0 || self.unfold.stages > self.unfold.max_stages {
            return Err(Error::Config(format!("stages must be in 1..={} (max_stages)", self.unfold.max_stages)));
        }
        if !(self.unfold.eta > 0.0 && self.unfold.rho > 0.0) {
            return Err(Error::Config("eta and rho must be positive".into()));
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.train.crop == 0 || self.train.crop > self.train.cube_size {
            return Err(Error::Config(format!("crop {} must be in 1..={}", self.train.crop, self.train.cube_size)));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash of the serialised configuration.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

impl fmt::Display for Config {
    /// Every key except `preset`, one `key = value` per line; parses back to
    /// an equal configuration.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (n, u, t) = (&self.net, &self.unfold, &self.train);
        let variant = match n.variant {
            Variant::Full => "full",
            Variant::Light => "light",
        };
        let order = match n.block_order {
            BlockOrder::GlobalFirst => "gs_ls",
            BlockOrder::LocalFirst => "ls_gs",
        };
        let dtype = match t.dtype {
            DType::F32 => "f32",
            DType::F64 => "f64",
        };
        writeln!(f, "channels = {}", n.channels)?;
        writeln!(f, "window = {}", n.window)?;
        writeln!(f, "depth = {}", n.depth)?;
        writeln!(f, "bottleneck = {}", n.bottleneck)?;
        writeln!(f, "state = {}", n.state)?;
        writeln!(f, "bands = {}", n.bands)?;
        writeln!(f, "variant = {variant}")?;
        writeln!(f, "block_order = {order}")?;
        writeln!(f, "share_directions = {}", n.share_directions)?;
        writeln!(f, "ffn_expansion = {}", n.ffn_expansion)?;
        writeln!(f, "scan_mode = {}", n.scan_mode)?;
        writeln!(f, "stages = {}", u.stages)?;
        writeln!(f, "max_stages = {}", u.max_stages)?;
        writeln!(f, "shift = {}", u.shift)?;
        writeln!(f, "learnable_eta = {}", u.learnable_eta)?;
        writeln!(f, "learnable_rho = {}", u.learnable_rho)?;
        writeln!(f, "eta = {:?}", u.eta)?;
        writeln!(f, "rho = {:?}", u.rho)?;
        writeln!(f, "pad = {}", u.pad)?;
        writeln!(f, "lr = {:?}", t.lr)?;
        writeln!(f, "steps = {}", t.steps)?;
        writeln!(f, "epochs = {}", t.epochs)?;
        writeln!(f, "halve_at = {:?}", t.halve_at)?;
        writeln!(f, "crop = {}", t.crop)?;
        writeln!(f, "cube_size = {}", t.cube_size)?;
        writeln!(f, "train_count = {}", t.train_count)?;
        writeln!(f, "val_count = {}", t.val_count)?;
        writeln!(f, "noise = {}", t.noise)?;
        writeln!(f, "seed = {}", t.seed)?;
        writeln!(f, "dtype = {dtype}")?;
        writeln!(f, "log_every = {}", t.log_every)?;
        write!(f, "val_every = {}", t.val_every)
    }
}
