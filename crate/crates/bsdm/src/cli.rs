//! Command-line interface. Every command writes `<out>.config.json` with its
//! arguments and the fully resolved configuration next to its outputs.

use std::path::{Path, PathBuf};

use bsdm_core::cube::normalize_cube;
use bsdm_core::detect::{ae_detect, ae_train, normalize_map, rx_detect, AeConfig};
use bsdm_core::metrics::{roc, separability};
use bsdm_core::pipeline::{run_pipeline, PipelineConfig};
use bsdm_core::scene::{synth_scene, SceneConfig};
use bsdm_core::suppress::{suppress_trace, SuppressOptions};
use bsdm_core::train::{train_with, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint::{checkpoint_prefix, load_checkpoint, save_checkpoint};
use crate::io::{cube_prefix, load_cube, load_map, load_mask, read_json, save_cube, save_map, save_map_preview, save_mask, strip_suffix, with_suffix, write_json};
use crate::report::{write_loss_history, write_pipeline_report, write_roc, write_separability, write_summary};
use crate::Result;

#[derive(Debug, Parser)]
#[command(name = "bsdm", version, about = "Background suppression for hyperspectral anomaly detection")]
pub struct Cli {
    /// Matrix-multiply threads; needs the `threading` feature to have an effect.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Run single-threaded regardless of --threads.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene and its anomaly mask.
    Synth(SynthArgs),
    /// Train a denoiser on a cube.
    Train(TrainArgs),
    /// Suppress the background of a cube with a trained denoiser.
    Suppress(SuppressArgs),
    /// Compute a detection map.
    Detect(DetectArgs),
    /// Score a detection map against a mask.
    Eval(EvalArgs),
    /// Synthesize, train, suppress and compare RX before and after.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Scene configuration (JSON); defaults are used for missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output prefix; writes `<out>.hdr.json`, `<out>.bin` and `<out>.mask.pgm`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub cube: PathBuf,
    /// Checkpoint prefix.
    #[arg(long)]
    pub out: PathBuf,
    /// Training configuration (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: 500]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Diffusion step used for training [default: 30]
    #[arg(long)]
    pub t: Option<usize>,
    /// Diffusion length [default: 1000]
    #[arg(long = "T")]
    pub steps: Option<usize>,
    /// [default: 0.02]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// [default: 0.0001]
    #[arg(long)]
    pub lr_init: Option<f64>,
    /// [default: 0.00001]
    #[arg(long)]
    pub lr_final: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SuppressArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Number of suppression passes.
    #[arg(long = "K", default_value_t = 10)]
    pub repeats: usize,
    /// Diffusion step; defaults to the checkpoint's training step.
    #[arg(long)]
    pub t: Option<usize>,
    /// Seed for random band removal.
    #[arg(long, default_value_t = 0)]
    pub align_seed: u64,
    /// Output prefix.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every intermediate cube as `<out>.kNN`.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rx,
    Ae,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Output map prefix.
    #[arg(long)]
    pub out: PathBuf,
    /// Autoencoder training epochs [default: 500]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Autoencoder seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write an 8-bit `<out>.pgm` rendering.
    #[arg(long)]
    pub preview: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    /// Summary CSV; `<stem>.roc.csv` and `<stem>.separability.csv` are written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    /// Full pipeline configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene configuration (JSON), replacing the scene part of --config.
    #[arg(long)]
    pub scene_config: Option<PathBuf>,
    /// Seed for both the scene and training [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "K")]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub t: Option<usize>,
    /// Report CSV with one row per arm.
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for the intermediate cubes, maps and checkpoint.
    #[arg(long)]
    pub artifacts: Option<PathBuf>,
}

#[derive(Serialize)]
struct Echo<'a, A: Serialize, R: Serialize> {
    command: &'a str,
    args: &'a A,
    resolved: R,
}

fn echo<A: Serialize, R: Serialize>(prefix: &Path, command: &str, args: &A, resolved: R) -> Result<()> {
    write_json(
        &with_suffix(prefix, ".config.json"),
        &Echo { command, args, resolved },
    )
}

fn csv_stem(path: &Path) -> PathBuf {
    strip_suffix(path, ".csv").unwrap_or_else(|| path.to_path_buf())
}

/// Sets the matrix-multiply thread count before any work is done.
pub fn configure_threads(threads: Option<usize>, deterministic: bool) {
    let threads = if deterministic { Some(1) } else { threads };
    if let Some(n) = threads {
        std::env::set_var("MATMUL_NUM_THREADS", n.max(1).to_string());
        if n > 1 && !cfg!(feature = "threading") {
            eprintln!("warning: built without the `threading` feature; running single-threaded");
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads, cli.deterministic);
    match cli.command {
        Command::Synth(args) => synth(&args),
        Command::Train(args) => train_cmd(&args),
        Command::Suppress(args) => suppress_cmd(&args),
        Command::Detect(args) => detect(&args),
        Command::Eval(args) => eval(&args),
        Command::Pipeline(args) => pipeline(&args),
    }
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut config: SceneConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (cube, mask) = synth_scene(&config)?;
    let prefix = cube_prefix(&args.out);
    save_cube(&prefix, &cube)?;
    save_mask(&with_suffix(&prefix, ".mask.pgm"), &mask)?;
    echo(&prefix, "synth", args, &config)
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut config: TrainConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { config.$field = v; })*
        };
    }
    set!(epochs => epochs, t => t_train, steps => steps, lambda => lambda, lr_init => lr_init, lr_final => lr_final, seed => seed);
    config.validate()?;
    config.schedule()?;

    let cube = normalize_cube(&load_cube(&args.cube)?);
    let every = (config.epochs / 10).max(1);
    let ckpt = train_with(&cube, &config, |epoch, loss| {
        if !args.quiet && (epoch % every == 0 || epoch + 1 == config.epochs) {
            eprintln!("epoch {epoch:>5}  loss {loss:.6}");
        }
    })?;
    let prefix = checkpoint_prefix(&args.out);
    save_checkpoint(&prefix, &ckpt)?;
    write_loss_history(&with_suffix(&prefix, ".loss.csv"), &ckpt.loss_history)?;
    echo(&prefix, "train", args, &config)
}

fn suppress_cmd(args: &SuppressArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let cube = normalize_cube(&load_cube(&args.cube)?);
    let options = SuppressOptions {
        repeats: args.repeats,
        t: args.t.unwrap_or(ckpt.config.t_train),
        align_seed: args.align_seed,
    };
    let trace = suppress_trace(&cube, &ckpt, options)?;
    let prefix = cube_prefix(&args.out);
    if args.trace {
        for (k, step) in trace.iter().enumerate() {
            save_cube(&with_suffix(&prefix, &format!(".k{:02}", k + 1)), step)?;
        }
    }
    let last = trace.last().expect("at least one pass");
    save_cube(&prefix, last)?;
    echo(&prefix, "suppress", args, options)
}

fn detect(args: &DetectArgs) -> Result<()> {
    let cube = load_cube(&args.cube)?;
    let prefix = cube_prefix(&args.out);
    let (map, resolved) = match args.method {
        Method::Rx => (rx_detect(&cube)?, None),
        Method::Ae => {
            let mut config = AeConfig::default();
            if let Some(epochs) = args.epochs {
                config.epochs = epochs;
            }
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            let model = ae_train(&cube, &config)?;
            (ae_detect(&cube, &model)?, Some(config))
        }
    };
    save_map(&prefix, &map)?;
    if args.preview {
        save_map_preview(&with_suffix(&prefix, ".pgm"), &map)?;
    }
    echo(&prefix, "detect", args, resolved)
}

fn eval(args: &EvalArgs) -> Result<()> {
    let map = normalize_map(&load_map(&args.map)?);
    let mask = load_mask(&args.mask)?;
    let curve = roc(&map, &mask)?;
    let sep = separability(&map, &mask)?;
    let stem = csv_stem(&args.out);
    write_summary(&args.out, &curve, &sep)?;
    write_roc(&with_suffix(&stem, ".roc.csv"), &curve)?;
    write_separability(&with_suffix(&stem, ".separability.csv"), &sep)?;
    echo(&stem, "eval", args, ())
}

fn pipeline(args: &PipelineArgs) -> Result<()> {
    let mut config: PipelineConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(path) = &args.scene_config {
        config.scene = read_json(path)?;
    }
    if let Some(seed) = args.seed {
        config = config.with_seed(seed);
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    if let Some(k) = args.repeats {
        config.repeats = k;
    }
    if let Some(t) = args.t {
        config.t = t;
        config.train.t_train = t;
    }
    let run = run_pipeline(&config)?;
    write_pipeline_report(&args.report, &[("baseline", &run.baseline), ("suppressed", &run.after)])?;
    if let Some(dir) = &args.artifacts {
        save_cube(&dir.join("scene"), &run.cube)?;
        save_mask(&dir.join("scene.mask.pgm"), &run.mask)?;
        save_checkpoint(&dir.join("model"), &run.checkpoint)?;
        write_loss_history(&dir.join("model.loss.csv"), &run.checkpoint.loss_history)?;
        save_cube(&dir.join("suppressed"), &run.suppressed)?;
        save_map(&dir.join("baseline.rx"), &run.baseline_map)?;
        save_map(&dir.join("suppressed.rx"), &run.suppressed_map)?;
    }
    echo(&csv_stem(&args.report), "pipeline", args, &config)
}
