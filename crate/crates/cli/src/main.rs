use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dhm::autodiff::checkpoint::Checkpoint;
use dhm::autodiff::set_adjoint_fault;
use dhm::cassi::{add_noise, HsiCube, Mask, NoiseModel, SensingOperator};
use dhm::config::Config;
use dhm::dataset::synth_dataset;
use dhm::gradsuite::{format_report, run_suite};
use dhm::io::{load_cube, load_mask, load_measurement, save_cube, save_mask, save_measurement};
use dhm::metrics::EvalReport;
use dhm::ssm::bench::{default_lengths, loglog_slope, sweep, BenchRow};
use dhm::ssm::ScanMode;
use dhm::unfolding::train::{adjoint_baseline, evaluate, simulate_set, train};
use dhm::unfolding::Unfolding;
use dhm::{DType, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MASK_SALT: u64 = 0x6d61_736b;
const NOISE_SALT: u64 = 0x6e6f_6973;

#[derive(Parser, Debug)]
#[command(name = "dhm", version, about = "Snapshot spectral imaging: simulate, train, reconstruct, evaluate")]
struct Cli {
    /// Configuration file of `key = value` lines (desk preset otherwise).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, global = true, env = "DHM_THREADS")]
    threads: Option<usize>,
    /// Configuration override `key=value`; repeatable, last wins.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output path (stdout for text reports when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measure a cube through a coded mask.
    Simulate(SimulateArgs),
    /// Train a model on synthetic or supplied cubes and write a checkpoint.
    Train(TrainArgs),
    /// Reconstruct a cube from a measurement.
    Reconstruct(ReconstructArgs),
    /// Score reconstructions.
    Eval(EvalArgs),
    /// Finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Time the sequential and parallel scans over sequence lengths.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
#[group(id = "mask_source", multiple = false)]
struct MaskSource {
    /// Mask file (MSK1).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Draw a random binary mask from the seed.
    #[arg(long)]
    random_mask: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scene (HSC1). Without it a synthetic scene is generated.
    #[arg(long)]
    cube: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskSource,
    /// Dispersion shift per band in pixels.
    #[arg(long)]
    shift: Option<usize>,
    /// none | gaussian:SIGMA | shot:BITS
    #[arg(long)]
    noise: Option<NoiseModel>,
    /// Also write the mask used.
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Also write the scene used.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training cubes (HSC1). Without them a synthetic set is generated.
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    #[command(flatten)]
    mask: MaskSource,
    /// Also write the mask used.
    #[arg(long)]
    mask_out: Option<PathBuf>,
    /// Per-step loss table.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Weights written by `train`.
    #[arg(long, required_unless_present = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    measurement: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Normalised adjoint instead of the model.
    #[arg(long)]
    baseline: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Tsv,
    Kv,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Reconstructions to score, paired with `--truth`.
    #[arg(long, num_args = 1.., requires = "truth")]
    recon: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    truth: Vec<PathBuf>,
    /// Score a checkpoint and the adjoint baseline on the synthetic held-out set.
    #[arg(long, conflicts_with = "recon")]
    checkpoint: Option<PathBuf>,
    /// Mask for `--checkpoint` (the seed's random mask otherwise).
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Sampled entries per weight tensor of the end-to-end model.
    #[arg(long, default_value_t = 4, conflicts_with = "exhaustive")]
    per_param: usize,
    /// Check every weight entry of the end-to-end model.
    #[arg(long)]
    exhaustive: bool,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Sequence lengths (default 2^10 .. 2^18).
    #[arg(long, value_delimiter = ',')]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 4)]
    state: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().context("configuring the thread pool")?;
    }
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Simulate(a) => simulate(&cli, &config, a)?,
        Command::Train(a) => match config.train.dtype {
            DType::F32 => train_cmd::<f32>(&cli, &config, a)?,
            DType::F64 => train_cmd::<f64>(&cli, &config, a)?,
        },
        Command::Reconstruct(a) => reconstruct(&cli, &config, a)?,
        Command::Eval(a) => eval(&cli, &config, a)?,
        Command::Gradcheck(a) => return gradcheck(&cli, a),
        Command::Bench(a) => bench(&cli, a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::desk(),
    };
    c.train.seed = cli.seed;
    for o in &cli.overrides {
        c.apply_override(o)?;
    }
    c.validate()?;
    Ok(c)
}

fn required_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().context("--out is required for this command")
}

/// Writes `text` to `--out` or stdout.
fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn random_mask(h: usize, w: usize, seed: u64) -> Mask {
    Mask::random_binary(h, w, &mut ChaCha8Rng::seed_from_u64(seed ^ MASK_SALT))
}

/// The mask named on the command line or the seed's random one, plus a
/// description for manifests.
fn resolve_mask(src: &MaskSource, h: usize, w: usize, seed: u64) -> Result<(Mask, String)> {
    match &src.mask {
        Some(p) => {
            let m = load_mask(p).with_context(|| format!("reading {}", p.display()))?;
            if (m.height, m.width) != (h, w) {
                bail!("mask is {}x{}, expected {h}x{w}", m.height, m.width);
            }
            Ok((m, format!("file {}", p.display())))
        }
        None => Ok((random_mask(h, w, seed), format!("random seed {seed}"))),
    }
}

fn simulate(cli: &Cli, config: &Config, a: &SimulateArgs) -> Result<()> {
    let out = required_out(cli)?;
    let seed = config.train.seed;
    let (cube, source) = match &a.cube {
        Some(p) => (load_cube(p).with_context(|| format!("reading {}", p.display()))?, format!("file {}", p.display())),
        None => {
            let s = config.train.cube_size;
            let c = synth_dataset(1, s, s, config.net.bands, seed)?.remove(0);
            (c, format!("synthetic seed {seed}"))
        }
    };
    let (mask, mask_source) = resolve_mask(&a.mask, cube.height, cube.width, seed)?;
    let shift = a.shift.unwrap_or(config.unfold.shift);
    let noise = a.noise.unwrap_or(config.train.noise);
    let op = SensingOperator::new(mask.clone(), cube.bands, shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_SALT);
    let y = add_noise(&op.measure(&cube)?, noise, &mut rng)?;
    save_measurement(out, &y)?;
    if let Some(p) = &a.mask_out {
        save_mask(p, &mask)?;
    }
    if let Some(p) = &a.truth_out {
        save_cube(p, &cube, DType::F32)?;
    }
    let manifest = format!(
        "cube = {source}\nmask = {mask_source}\nshift = {shift}\nnoise = {noise}\nseed = {seed}\n\
         height = {}\nwidth = {}\nbands = {}\nmeasurement_width = {}\n",
        cube.height, cube.width, cube.bands, y.width
    );
    fs::write(manifest_path(out), manifest)?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn train_cmd<S: Scalar>(cli: &Cli, config: &Config, a: &TrainArgs) -> Result<()> {
    let out = required_out(cli)?;
    let t = &config.train;
    let (train_set, val_set) = if a.data.is_empty() {
        let mut all = synth_dataset(t.train_count + t.val_count, t.cube_size, t.cube_size, config.net.bands, t.seed)?;
        let val = all.split_off(t.train_count);
        (all, val)
    } else {
        let cubes = a
            .data
            .iter()
            .map(|p| load_cube(p).with_context(|| format!("reading {}", p.display())))
            .collect::<Result<Vec<_>>>()?;
        (cubes, Vec::new())
    };
    let (mask, _) = resolve_mask(&a.mask, t.crop, t.crop, t.seed)?;
    let model = Unfolding::<S>::new(config, t.seed)?;
    eprintln!("parameters {}  steps {}  config {}", model.param_count(), t.total_steps(), config.fingerprint());
    let report = train(&model, &train_set, &val_set, &mask, &mut |line| eprintln!("{line}"))?;
    model.save(out)?;
    if let Some(p) = &a.mask_out {
        save_mask(p, &mask)?;
    }
    if let Some(p) = &a.losses {
        let mut s = String::from("step\tloss\n");
        for (i, l) in report.losses.iter().enumerate() {
            s += &format!("{}\t{l:.6e}\n", i + 1);
        }
        fs::write(p, s)?;
    }
    let tail = report.losses.len().saturating_sub(50)..report.losses.len();
    println!("final_loss\t{:.6}", report.mean_loss(tail));
    if let Some((_, v)) = report.validation.last() {
        println!("val_psnr_db\t{v:.3}");
    }
    println!("seconds\t{:.1}", report.seconds);
    Ok(())
}

fn load_model<S: Scalar>(ck: &Checkpoint) -> Result<Unfolding<S>> {
    Ok(Unfolding::<S>::from_checkpoint(ck)?)
}

fn read_checkpoint(p: &Path) -> Result<(Checkpoint, Config)> {
    let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
    let ck = Checkpoint::read_from(io::BufReader::new(f)).with_context(|| format!("reading {}", p.display()))?;
    let cfg = Config::from_text(&ck.header)?;
    Ok((ck, cfg))
}

fn reconstruct_with(
    ck: &Checkpoint,
    dtype: DType,
    op: &SensingOperator,
    y: &dhm::cassi::Measurement,
) -> Result<HsiCube> {
    Ok(match dtype {
        DType::F32 => load_model::<f32>(ck)?.reconstruct(op, y)?,
        DType::F64 => load_model::<f64>(ck)?.reconstruct(op, y)?,
    })
}

fn reconstruct(cli: &Cli, config: &Config, a: &ReconstructArgs) -> Result<()> {
    let out = required_out(cli)?;
    let y = load_measurement(&a.measurement).with_context(|| format!("reading {}", a.measurement.display()))?;
    let mask = load_mask(&a.mask).with_context(|| format!("reading {}", a.mask.display()))?;
    let (cube, dtype) = match (&a.checkpoint, a.baseline) {
        (Some(p), false) => {
            let (ck, cfg) = read_checkpoint(p)?;
            let op = SensingOperator::new(mask, cfg.net.bands, cfg.unfold.shift)?;
            (reconstruct_with(&ck, cfg.train.dtype, &op, &y)?, cfg.train.dtype)
        }
        _ => {
            let op = SensingOperator::new(mask, config.net.bands, config.unfold.shift)?;
            (adjoint_baseline(&op, &y)?, DType::F64)
        }
    };
    save_cube(out, &cube, dtype)?;
    Ok(())
}

fn eval(cli: &Cli, config: &Config, a: &EvalArgs) -> Result<()> {
    let render = |r: &EvalReport| match a.format {
        Format::Tsv => r.to_tsv(),
        Format::Kv => r.to_kv(),
    };
    if let Some(p) = &a.checkpoint {
        let (ck, cfg) = read_checkpoint(p)?;
        let t = &cfg.train;
        let mut all =
            synth_dataset(t.train_count + t.val_count, t.cube_size, t.cube_size, cfg.net.bands, config.train.seed)?;
        let held_out = all.split_off(t.train_count);
        let src = MaskSource { mask: a.mask.clone(), random_mask: a.mask.is_none() };
        let (mask, _) = resolve_mask(&src, t.crop, t.crop, config.train.seed)?;
        let op = SensingOperator::new(mask, cfg.net.bands, cfg.unfold.shift)?;
        let pairs = simulate_set(&op, &held_out, t.noise, config.train.seed)?;
        let (model, base) = match t.dtype {
            DType::F32 => evaluate(&load_model::<f32>(&ck)?, &op, &pairs)?,
            DType::F64 => evaluate(&load_model::<f64>(&ck)?, &op, &pairs)?,
        };
        let text = format!("# model\n{}# adjoint baseline\n{}", render(&model), render(&base));
        return emit(cli, &text);
    }
    if a.recon.is_empty() || a.recon.len() != a.truth.len() {
        bail!("give --checkpoint, or equally many --recon and --truth files");
    }
    let load = |ps: &[PathBuf]| {
        ps.iter().map(|p| load_cube(p).with_context(|| format!("reading {}", p.display()))).collect::<Result<Vec<_>>>()
    };
    let (recon, truth) = (load(&a.recon)?, load(&a.truth)?);
    let names: Vec<String> =
        a.recon.iter().map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()).collect();
    let mut report = EvalReport::score(&names, &recon, &truth)?;
    report.fingerprint = config.fingerprint();
    emit(cli, &render(&report))
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<ExitCode> {
    if let Some(name) = &a.inject_fault {
        set_adjoint_fault(Some(Box::leak(name.clone().into_boxed_str())));
    }
    let per_param = (!a.exhaustive).then_some(a.per_param);
    let entries = run_suite(cli.seed, per_param)?;
    emit(cli, &format_report(&entries))?;
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: {}", failed.join(", "));
        Ok(ExitCode::FAILURE)
    }
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let lengths = if a.lengths.is_empty() { default_lengths() } else { a.lengths.clone() };
    let threads = cli.threads.unwrap_or_else(rayon::current_num_threads);
    let modes = [ScanMode::Sequential, ScanMode::Parallel];
    let rows = sweep(&modes, &lengths, a.channels, a.state, threads, a.repeats, cli.seed)?;
    let mut s = format!("{}\n", BenchRow::HEADER);
    for r in &rows {
        s += &format!("{r}\n");
    }
    for (mode, chunk) in modes.iter().zip(rows.chunks(lengths.len())) {
        let slope = if lengths.len() > 1 { loglog_slope(chunk) } else { f64::NAN };
        s += &format!("# slope\t{mode}\t{slope:.4}\n");
    }
    emit(cli, &s)
}
