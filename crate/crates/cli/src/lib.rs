//! The `cpca` command line: training, sliding-window inference, evaluation,
//! gradient checking, FLOP ledgers, synthetic data, and config dumps.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpca_core::gradcheck::default_suite;
use cpca_core::inference::sliding_window_predict;
use cpca_core::io::config::RunConfig;
use cpca_core::io::synth::{synth_dataset, ShapeFamily, SynthSpec};
use cpca_core::io::{checkpoint, cpct, dataset_dir, pgm, write_atomic};
use cpca_core::train::{evaluate_masks, fit, TrainLog};
use cpca_core::{CpcaNet, Element, Error, Mask, Result, SlidingWindowConfig, Tensor};

/// File names inside a training output directory.
pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "model.cpck";

pub fn epoch_checkpoint(epoch: usize) -> String {
    format!("epoch_{epoch:04}.cpck")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Parser)]
#[command(name = "cpca", version, about = "CPCANet medical image segmentation")]
struct Cli {
    /// Seed for weight init, shuffling, and data synthesis; overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "f32")]
    precision: Precision,
    /// Run configuration file (`key = value` lines); `-` reads stdin.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a dataset directory.
    Train(TrainArgs),
    /// Predict one PGM image with Gaussian-weighted sliding windows.
    Infer(InferArgs),
    /// Per-class DSC, IoU, and HD95.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable op.
    Gradcheck(GradcheckArgs),
    /// Per-layer parameter and FLOP ledger.
    Flops(FlopsArgs),
    /// Write a synthetic dataset directory.
    SynthData(SynthArgs),
    /// Print the fully resolved configuration.
    DumpConfig,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory with a manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the log, checkpoints, and resolved config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Write a checkpoint every N epochs (0: final only).
    #[arg(long)]
    save_every: Option<usize>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input image (binary PGM, one channel).
    #[arg(long)]
    input: PathBuf,
    /// Window size, `N` or `HxW`.
    #[arg(long, value_parser = parse_crop)]
    crop: Option<(usize, usize)>,
    #[arg(long)]
    stride_factor: Option<f64>,
    #[arg(long)]
    sigma_factor: Option<f64>,
    #[arg(long)]
    out_mask: Option<PathBuf>,
    /// `[K, H, W]` probabilities in CPCT format.
    #[arg(long)]
    out_prob: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted mask, or a directory of `.pgm` masks.
    #[arg(long, requires = "gt", conflicts_with_all = ["data", "checkpoint"])]
    pred: Option<PathBuf>,
    /// Ground-truth mask, or a directory with the same file names.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Dataset directory to predict and score with `--checkpoint`.
    #[arg(long, requires = "checkpoint")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    checkpoint: Option<PathBuf>,
    /// Class count including background; defaults to `network.num_classes`.
    #[arg(long)]
    num_classes: Option<usize>,
    /// Pixel spacing `dy,dx` for HD95.
    #[arg(long, value_parser = parse_spacing, default_value = "1,1")]
    spacing: [f64; 2],
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct FlopsArgs {
    /// Input height; defaults to `infer.crop_h`.
    #[arg(long)]
    height: Option<usize>,
    /// Input width; defaults to `infer.crop_w`.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Also write the ledger as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    num_samples: usize,
    #[arg(long, default_value_t = 64)]
    image_size: usize,
    /// Class count including background; defaults to `network.num_classes`.
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long, default_value = "rings")]
    family: ShapeFamily,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
}

fn parse_crop(s: &str) -> std::result::Result<(usize, usize), String> {
    let bad = || format!("expected `N` or `HxW`, got `{s}`");
    let (h, w) = match s.split_once('x') {
        Some((h, w)) => (h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?),
        None => {
            let n = s.parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    Ok((h, w))
}

fn parse_spacing(s: &str) -> std::result::Result<[f64; 2], String> {
    let bad = || format!("expected `dy,dx`, got `{s}`");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok([a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?])
}

/// Parses `argv` (program name first), runs the command, and returns the
/// process exit code: 0 success, 1 usage error, 2 runtime failure.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// [`run_cli`] with explicit output streams.
pub fn run_with<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        None => RunConfig::default(),
        Some(p) if p.as_os_str() == "-" => {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text)?;
            RunConfig::parse(&text)?
        }
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

/// The config beside a checkpoint, as written by `train`.
fn config_for_checkpoint(cli: &Cli, ckpt: &Path) -> Result<RunConfig> {
    if cli.config.is_some() {
        return load_config(cli.config.as_deref(), cli.seed);
    }
    let sibling = ckpt.with_file_name(CONFIG_FILE);
    if sibling.is_file() {
        load_config(Some(&sibling), cli.seed)
    } else {
        load_config(None, cli.seed)
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match &cli.cmd {
        Command::DumpConfig => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            write!(out, "{}", cfg.to_text())?;
            Ok(0)
        }
        Command::Train(a) => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            match cli.precision {
                Precision::F32 => train::<f32>(cfg, a, out, err),
                Precision::F64 => train::<f64>(cfg, a, out, err),
            }
        }
        Command::Infer(a) => {
            let cfg = config_for_checkpoint(&cli, &a.checkpoint)?;
            match cli.precision {
                Precision::F32 => infer::<f32>(&cfg, a, out),
                Precision::F64 => infer::<f64>(&cfg, a, out),
            }
        }
        Command::Eval(a) => {
            let cfg = match &a.checkpoint {
                Some(c) => config_for_checkpoint(&cli, c)?,
                None => load_config(cli.config.as_deref(), cli.seed)?,
            };
            match cli.precision {
                Precision::F32 => eval::<f32>(&cfg, a, out),
                Precision::F64 => eval::<f64>(&cfg, a, out),
            }
        }
        Command::Gradcheck(a) => {
            if cli.precision != Precision::F64 {
                return Err(Error::Config("gradcheck runs at 64-bit only; pass --precision f64".into()));
            }
            gradcheck(cli.seed.unwrap_or(0), a, out)
        }
        Command::Flops(a) => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            flops(&cfg, a, out)
        }
        Command::SynthData(a) => {
            let cfg = load_config(cli.config.as_deref(), cli.seed)?;
            synth(&cfg, cli.seed.unwrap_or(cfg.train.seed), a, out)
        }
    }
}

fn train<T: Element>(mut cfg: RunConfig, a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.save_every {
        cfg.train.save_every = s;
    }
    cfg.validate()?;
    let (k, data) = dataset_dir::read_dataset::<T>(&a.data)?;
    if k != cfg.network.num_classes {
        return Err(Error::Config(format!(
            "dataset has {k} classes but network.num_classes is {}; set it in the config",
            cfg.network.num_classes
        )));
    }
    fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    let mut model = CpcaNet::<T>::build(&cfg.network, cfg.variant, cfg.train.seed)?;
    let mut log = TrainLog::default();
    let log_path = a.out.join(LOG_FILE);
    let every = cfg.train.save_every;
    let start = Instant::now();
    let quiet = a.quiet;
    fit(&mut model, &data, &cfg.train, |rec, m| {
        log.records.push(rec.clone());
        write_atomic(&log_path, log.to_csv(k).as_bytes())?;
        if every > 0 && rec.epoch % every == 0 {
            checkpoint::save(&m.store, &a.out.join(epoch_checkpoint(rec.epoch)))?;
        }
        if !quiet {
            let _ = writeln!(
                err,
                "epoch {:>4}  loss {:.5}  dsc {:6.2}  ({:.1}s)",
                rec.epoch,
                rec.loss,
                rec.dsc_mean,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    if log.records.is_empty() {
        write_atomic(&log_path, log.to_csv(k).as_bytes())?;
    }
    let final_path = a.out.join(FINAL_CHECKPOINT);
    checkpoint::save(&model.store, &final_path)?;
    let dsc = log.records.last().map_or(0.0, |r| r.dsc_mean);
    writeln!(
        out,
        "trained {} epochs; final mean DSC {dsc:.2}; checkpoint {}",
        log.records.len(),
        final_path.display()
    )?;
    Ok(0)
}

fn restore_model<T: Element>(cfg: &RunConfig, path: &Path) -> Result<CpcaNet<T>> {
    let mut model = CpcaNet::<T>::build(&cfg.network, cfg.variant, cfg.train.seed)?;
    checkpoint::load(&mut model.store, path)?;
    Ok(model)
}

fn infer<T: Element>(cfg: &RunConfig, a: &InferArgs, out: &mut dyn Write) -> Result<i32> {
    let mut win = cfg.infer;
    if let Some((h, w)) = a.crop {
        win = SlidingWindowConfig { crop_h: h, crop_w: w, ..win };
    }
    if let Some(s) = a.stride_factor {
        win.stride_factor = s;
    }
    if let Some(s) = a.sigma_factor {
        win.sigma_factor = s;
    }
    win.validate()?;
    cfg.network.check_input(win.crop_h, win.crop_w)?;
    if a.out_mask.is_none() && a.out_prob.is_none() {
        return Err(Error::Invalid("nothing to write; pass --out-mask and/or --out-prob".into()));
    }
    let model = restore_model::<T>(cfg, &a.checkpoint)?;
    let image: Tensor<f64> = pgm::read_image(&a.input)?;
    if model.config.in_channels != 1 {
        return Err(Error::Invalid(format!(
            "PGM input has 1 channel but the network expects {}",
            model.config.in_channels
        )));
    }
    let pred = sliding_window_predict(&model, &image, &win)?;
    if let Some(p) = &a.out_mask {
        pgm::write_mask(&pred.mask, p)?;
    }
    if let Some(p) = &a.out_prob {
        let mut bytes = Vec::new();
        cpct::encode(&pred.prob.cast::<T>(), &mut bytes);
        write_atomic(p, &bytes)?;
    }
    writeln!(
        out,
        "predicted {}x{} image with {}x{} windows",
        pred.mask.height, pred.mask.width, win.crop_h, win.crop_w
    )?;
    Ok(0)
}

fn pgm_files(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    names.sort();
    Ok(names)
}

/// Mask names of a dataset directory manifest, or every `.pgm` file otherwise.
fn mask_names(dir: &Path) -> Result<Vec<String>> {
    let manifest = dir.join(dataset_dir::MANIFEST);
    if !manifest.is_file() {
        return pgm_files(dir);
    }
    Ok(fs::read_to_string(&manifest)?
        .lines()
        .skip(1)
        .filter_map(|l| l.split_whitespace().nth(1))
        .map(str::to_string)
        .collect())
}

fn mask_pairs(pred: &Path, gt: &Path) -> Result<(Vec<Mask>, Vec<Mask>)> {
    if !pred.is_dir() {
        return Ok((vec![pgm::read_mask(pred)?], vec![pgm::read_mask(gt)?]));
    }
    let names = mask_names(gt)?;
    if names.is_empty() {
        return Err(Error::Invalid(format!("no .pgm masks in `{}`", gt.display())));
    }
    let mut p = Vec::with_capacity(names.len());
    let mut g = Vec::with_capacity(names.len());
    for n in &names {
        let pp = pred.join(n);
        if !pp.is_file() {
            return Err(Error::Invalid(format!("prediction `{}` is missing", pp.display())));
        }
        p.push(pgm::read_mask(&pp)?);
        g.push(pgm::read_mask(&gt.join(n))?);
    }
    Ok((p, g))
}

fn eval<T: Element>(cfg: &RunConfig, a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let (preds, gts, k) = match (&a.pred, &a.gt, &a.data, &a.checkpoint) {
        (Some(p), Some(g), _, _) => {
            let (p, g) = mask_pairs(p, g)?;
            (p, g, a.num_classes.unwrap_or(cfg.network.num_classes))
        }
        (None, None, Some(d), Some(c)) => {
            let model = restore_model::<T>(cfg, c)?;
            let (k, samples) = dataset_dir::read_dataset::<f64>(d)?;
            let mut preds = Vec::with_capacity(samples.len());
            for s in &samples {
                preds.push(sliding_window_predict(&model, &s.image, &cfg.infer)?.mask);
            }
            (preds, samples.into_iter().map(|s| s.mask).collect(), a.num_classes.unwrap_or(k))
        }
        _ => return Err(Error::Invalid("pass either --pred and --gt, or --data and --checkpoint".into())),
    };
    for m in preds.iter().chain(&gts) {
        if let Some(&l) = m.labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::Invalid(format!("mask label {l} out of range for {k} classes")));
        }
    }
    let report = evaluate_masks(&preds, &gts, k, a.spacing)?;
    write!(out, "{}", report.to_table())?;
    Ok(0)
}

fn gradcheck(seed: u64, a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let start = Instant::now();
    let suite = default_suite(seed)?;
    writeln!(out, "{:<32}{:>10}{:>16}  status", "case", "elements", "max rel error")?;
    let mut failed = 0;
    for case in &suite {
        let r = case.check(a.step, a.tolerance)?;
        let ok = r.passed();
        failed += usize::from(!ok);
        writeln!(out, "{:<32}{:>10}{:>16.3e}  {}", case.name, case.numel(), r.max(), if ok { "ok" } else { "FAIL" })?;
    }
    writeln!(
        out,
        "{} cases, {failed} failed, h = {:e}, tolerance {:e}, {:.1}s",
        suite.len(),
        a.step,
        a.tolerance,
        start.elapsed().as_secs_f64()
    )?;
    Ok(if failed == 0 { 0 } else { 2 })
}

fn flops(cfg: &RunConfig, a: &FlopsArgs, out: &mut dyn Write) -> Result<i32> {
    let h = a.height.unwrap_or(cfg.infer.crop_h);
    let w = a.width.unwrap_or(cfg.infer.crop_w);
    let model = CpcaNet::<f32>::build(&cfg.network, cfg.variant, cfg.train.seed)?;
    let ledger = model.ledger(a.batch, h, w)?;
    write!(out, "{}", ledger.to_table())?;
    if let Some(p) = &a.csv {
        write_atomic(p, ledger.to_csv().as_bytes())?;
    }
    Ok(0)
}

fn synth(cfg: &RunConfig, seed: u64, a: &SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let spec = SynthSpec {
        num_samples: a.num_samples,
        image_size: a.image_size,
        num_classes: a.num_classes.unwrap_or(cfg.network.num_classes),
        family: a.family,
        noise_sigma: a.noise_sigma,
        seed,
    };
    let samples = synth_dataset::<f64>(&spec)?;
    dataset_dir::write_dataset(&a.out, &samples, spec.num_classes)?;
    writeln!(out, "wrote {} {} samples to {}", samples.len(), spec.family, a.out.display())?;
    Ok(0)
}
