use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpc::checkpoint::{encode_features, load_checkpoint, save_checkpoint};
use gpc::frames::{decode_frame, load_dataset};
use gpc::keyvalue::{strategy_from_name, RunConfig, SynthSpec};
use gpc::palette_file::{load_palette, save_palette};
use gpc::pipeline::{fit_palette, prepare, write_synth, PaletteJob, PrepareDirs, Threads};
use gpc::ply::render_ply;
use gpc::seeds::parse_seed_spec;
use gpc::{fsio, Error, Result};
use gpc_core::hinting::SeedStrategy;
use gpc_core::losses::LossKind;
use gpc_core::model::Head;
use gpc_core::trainer::{colorize, evaluate_frames, export_features, EvalOptions, Executor, Metrics, Serial, Trainer};

/// Colorization pre-training for LiDAR point clouds.
#[derive(Parser)]
#[command(name = "gpc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Color KITTI frames by projecting points into their camera image.
    Prepare(PrepareArgs),
    /// Fit the K-means color palette on sampled image pixels.
    FitPalette(FitPaletteArgs),
    /// Pre-train the backbone by hinted colorization.
    Pretrain(PretrainArgs),
    /// Report accuracy of a checkpoint on a prepared dataset.
    Eval(EvalArgs),
    /// Colorize one frame, optionally with hand-written seeds, into a PLY file.
    Colorize(ColorizeArgs),
    /// Write `[xyz | backbone features]` for one frame.
    ExportFeatures(ExportArgs),
    /// Generate synthetic box-and-ground scenes.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Directory of `<id>.bin` velodyne scans.
    #[arg(long)]
    velodyne: PathBuf,
    /// Directory of `<id>.txt` calibration files.
    #[arg(long)]
    calib: PathBuf,
    /// Directory of `<id>.ppm` camera images.
    #[arg(long)]
    images: PathBuf,
    /// Output directory for colored frames and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct FitPaletteArgs {
    /// Image directory of one dataset; repeat for several datasets.
    #[arg(long = "images", required = true)]
    images: Vec<PathBuf>,
    /// Output palette file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    k: usize,
    #[arg(long, default_value_t = 3000)]
    images_per_dataset: usize,
    #[arg(long, default_value_t = 1000)]
    pixels_per_image: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PretrainArgs {
    /// Prepared dataset directory (with manifest.tsv).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    /// Checkpoint written after every epoch.
    #[arg(long)]
    out: PathBuf,
    /// Run config of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tab-separated log: epoch, lr, loss, acc_all, acc_unknown.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Continue from a checkpoint; its settings are kept, except that
    /// --epochs may extend the run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// [default: 80]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    batch: Option<usize>,
    /// Peak learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Fraction of points revealed as hints [default: 0.2]
    #[arg(long)]
    seed_ratio: Option<f64>,
    /// uniform or balanced [default: uniform]
    #[arg(long)]
    seed_strategy: Option<String>,
    /// bs, ce, mse or sl1 [default: bs]
    #[arg(long)]
    loss: Option<String>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Stop once this many epochs are done; the schedule still spans
    /// --epochs, so a later --resume continues the same run.
    #[arg(long)]
    stop_after: Option<usize>,
    /// Worker threads; 1 keeps runs bit-reproducible.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    /// Fraction of points revealed as hints; 0 is pure prediction.
    #[arg(long, default_value_t = 0.2)]
    seed_ratio: f64,
    #[arg(long, default_value = "uniform")]
    seed_strategy: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct ColorizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Colored-frame file; its colors are ignored.
    #[arg(long)]
    frame: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    /// Lines of `index label` (0-based point, 1-based label); none means no seeds.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Output PLY file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    frame: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec of `key = value` lines.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn executor(threads: usize) -> Result<Option<Threads>> {
    match threads {
        0 => Err(Error::Usage("--threads must be at least 1".into())),
        1 => Ok(None),
        n => Threads::new(n).map(Some),
    }
}

fn strategy(name: &str) -> Result<SeedStrategy> {
    strategy_from_name(name).ok_or_else(|| Error::Usage(format!("unknown seed strategy '{name}'")))
}

fn run_prepare(a: PrepareArgs) -> Result<()> {
    let threads = a.threads.unwrap_or_else(rayon::current_num_threads);
    let exec = Threads::new(threads.max(1))?;
    let dirs = PrepareDirs { velodyne: &a.velodyne, calib: &a.calib, images: &a.images, out: &a.out };
    let report = prepare(&dirs, &exec)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("prepared {} frames into {}", report.frames.len(), a.out.display());
    Ok(())
}

fn run_fit_palette(a: FitPaletteArgs) -> Result<()> {
    let job = PaletteJob {
        datasets: &a.images,
        k: a.k,
        images_per_dataset: a.images_per_dataset,
        pixels_per_image: a.pixels_per_image,
        seed: a.seed,
    };
    let fit = fit_palette(&job)?;
    save_palette(&a.out, &fit.palette()?)?;
    println!("k={} iterations={} inertia={}", a.k, fit.iterations, fit.inertia());
    Ok(())
}

fn pretrain_config(a: &PretrainArgs, classes: usize) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::from_text(&fsio::read_text(path)?)?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.max_lr = v;
    }
    if let Some(v) = a.seed_ratio {
        t.seed_ratio = v;
    }
    if let Some(v) = &a.seed_strategy {
        t.seed_strategy = strategy(v)?;
    }
    if let Some(v) = &a.loss {
        t.loss = LossKind::from_name(v).ok_or_else(|| Error::Usage(format!("unknown loss '{v}'")))?;
    }
    if let Some(v) = a.seed {
        t.rng_seed = v;
    }
    cfg.model.classes = classes;
    cfg.model.head = if t.loss.is_regression() { Head::Regression } else { Head::Classification };
    t.validate().map_err(|e| Error::Usage(e.to_string()))?;
    cfg.model.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(cfg)
}

fn metrics_line(epoch: usize, lr: f64, m: &Metrics) -> String {
    let unknown = m.unknown_accuracy().map_or("nan".to_string(), |v| format!("{v:.6}"));
    format!("{epoch}\t{lr:.8}\t{:.6}\t{:.6}\t{unknown}\n", m.mean_loss(), m.accuracy())
}

fn run_pretrain(a: PretrainArgs) -> Result<()> {
    let palette = load_palette(&a.palette)?;
    let (_, frames) = load_dataset(&a.data)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let overrides = a.config.is_some()
                || a.batch.is_some()
                || a.lr.is_some()
                || a.seed_ratio.is_some()
                || a.seed_strategy.is_some()
                || a.loss.is_some()
                || a.seed.is_some();
            if overrides {
                return Err(Error::Usage("a resumed run keeps its settings; only --epochs may change".into()));
            }
            let mut t = load_checkpoint(path)?;
            if let Some(e) = a.epochs {
                t.config.epochs = e;
            }
            t
        }
        None => {
            let cfg = pretrain_config(&a, palette.k())?;
            Trainer::new(cfg.model, cfg.train)?
        }
    };
    let mut log = match (&a.metrics, &a.resume) {
        (Some(path), Some(_)) if path.exists() => fsio::read_text(path)?,
        _ => String::new(),
    };
    let pool = executor(a.threads)?;
    let stop = a.stop_after.unwrap_or(usize::MAX);
    while !trainer.is_finished() && trainer.epochs_done < stop {
        let m = match &pool {
            Some(p) => trainer.train_epoch(&frames, &palette, p)?,
            None => trainer.train_epoch(&frames, &palette, &Serial)?,
        };
        let line = metrics_line(m.epoch, m.lr, &m.metrics);
        print!("{line}");
        log.push_str(&line);
        save_checkpoint(&a.out, &trainer)?;
        if let Some(path) = &a.metrics {
            fsio::write_atomic(path, log.as_bytes())?;
        }
    }
    Ok(())
}

fn eval_with<E: Executor>(a: &EvalArgs, exec: &E) -> Result<()> {
    let trainer = load_checkpoint(&a.checkpoint)?;
    let palette = load_palette(&a.palette)?;
    let (_, frames) = load_dataset(&a.data)?;
    let opts = EvalOptions { seed_ratio: a.seed_ratio, seed_strategy: strategy(&a.seed_strategy)?, rng_seed: a.seed };
    if !(0.0..=1.0).contains(&opts.seed_ratio) {
        return Err(Error::Usage("--seed-ratio must lie in [0, 1]".into()));
    }
    let mut total = Metrics::new(palette.k());
    for m in evaluate_frames(&trainer.params, &frames, &palette, &opts, exec)? {
        total.merge(&m);
    }
    let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.6}"));
    println!("frames\t{}", frames.len());
    println!("loss\t{:.6}", total.mean_loss());
    println!("acc_all\t{:.6}", total.accuracy());
    println!("acc_unknown\t{}", fmt(total.unknown_accuracy()));
    println!("mean_class_acc\t{}", fmt(total.mean_class_accuracy()));
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    match executor(a.threads)? {
        Some(p) => eval_with(&a, &p),
        None => eval_with(&a, &Serial),
    }
}

fn load_frame(path: &Path) -> Result<gpc_core::ColoredPointCloud> {
    decode_frame(&fsio::read(path)?).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

fn run_colorize(a: ColorizeArgs) -> Result<()> {
    let trainer = load_checkpoint(&a.checkpoint)?;
    let palette = load_palette(&a.palette)?;
    let frame = load_frame(&a.frame)?;
    let points = frame.points();
    let seeds = match &a.seeds {
        Some(path) => parse_seed_spec(&fsio::read_text(path)?, points.len(), palette.k())?,
        None => Vec::new(),
    };
    let (labels, colors) = colorize(&trainer.params, points, &palette, &seeds)?;
    fsio::write_atomic(&a.out, render_ply(points, &colors, &labels).as_bytes())?;
    println!("colorized {} points with {} seeds", points.len(), seeds.len());
    Ok(())
}

fn run_export(a: ExportArgs) -> Result<()> {
    let trainer = load_checkpoint(&a.checkpoint)?;
    let frame = load_frame(&a.frame)?;
    let features = export_features(&trainer.params, frame.points())?;
    fsio::write_atomic(&a.out, &encode_features(&features)?)?;
    println!("exported {}x{} features", features.rows(), features.cols());
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec::from_text(&fsio::read_text(&a.spec)?)?;
    let frames = write_synth(&spec, &a.out)?;
    println!("wrote {} scenes to {}", frames.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => run_prepare(a),
        Command::FitPalette(a) => run_fit_palette(a),
        Command::Pretrain(a) => run_pretrain(a),
        Command::Eval(a) => run_eval(a),
        Command::Colorize(a) => run_colorize(a),
        Command::ExportFeatures(a) => run_export(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
