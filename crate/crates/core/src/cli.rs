//! The `petgan` command line: one subcommand per pipeline stage, each
//! reading and writing plain files.
//!
//! Every command accepts `--config FILE` (flat `key=value`, see
//! [`crate::config`]); flags override file values, and the resolved
//! configuration is written next to the outputs as `run.cfg`, headed by
//! the command line that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, generate_class, sample_seeds};
use crate::io::{self, MANIFEST_FILE};
use crate::label::ClassLabel;
use crate::model::ModelConfig;
use crate::phantom::{iter_corpus, ManifestRow, RegionClassifier};
use crate::pipeline::{preprocess, Axis, Canvas, PipelineConfig};
use crate::train::{load_checkpoint, ModelCheckpoint, TrainHistory, Trainer, TrainingSet};
use crate::walk::{walk, GanRenderer, WalkMode};

pub const RUN_CONFIG_FILE: &str = "run.cfg";

#[derive(Debug, Parser)]
#[command(name = "petgan", version, about = "Conditional GAN for MIP PET-like images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise a phantom volume corpus (PVOL1 files + manifest).
    Phantom(PhantomArgs),
    /// Resample, window, project and letterbox volumes into PGM images.
    Preprocess(PreprocessArgs),
    /// Train the conditional GAN on a preprocessed image directory.
    Train(TrainArgs),
    /// Sample images of one class from a checkpoint.
    Generate(GenerateArgs),
    /// Walk the latent space and score the walk.
    Walk(WalkArgs),
    /// Per-class conditioning accuracy, memorisation distance and realism.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Volumes per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Voxel counts as Z,Y,X.
    #[arg(long, value_parser = parse_triple::<usize>)]
    pub dims: Option<[usize; 3]>,
    /// Voxel spacing in mm as Z,Y,X.
    #[arg(long, value_parser = parse_triple::<f64>)]
    pub spacing: Option<[f64; 3]>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub suv_max: Option<f64>,
    /// Isotropic target spacing in mm.
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long, value_parser = parse_axis)]
    pub axis: Option<Axis>,
    /// Output canvas as HEIGHT,WIDTH.
    #[arg(long, value_parser = parse_pair)]
    pub canvas: Option<(usize, usize)>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-width channel plan.
    Paper,
    /// Narrow channel plan for CPU runs.
    Desk,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generator upsampling stages (canvas 5·2^s × 3·2^s).
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from `OUT/checkpoint` up to `--epochs`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Checkpoint directory (the `checkpoint` folder inside a training run).
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "class", value_parser = parse_class)]
    pub class: ClassLabel,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct WalkArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<WalkMode>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_class)]
    pub from_class: Option<ClassLabel>,
    #[arg(long, value_parser = parse_class)]
    pub to_class: Option<ClassLabel>,
    /// Seed for the two lerp endpoints.
    #[arg(long)]
    pub seed: Option<u64>,
    /// First coordinate at the start of a first-coord walk.
    #[arg(long)]
    pub a: Option<f64>,
    /// First coordinate at the end of a first-coord walk.
    #[arg(long)]
    pub b: Option<f64>,
    /// Training images for nearest-neighbour distances.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Training images for nearest-neighbour distances.
    #[arg(long)]
    pub data: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Phantom geometry the classifier assumes (`phantom.*` keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 3], String> {
    let v: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad number `{p}`")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three comma-separated values, got `{s}`"))
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected HEIGHT,WIDTH, got `{s}`"))?;
    let num = |p: &str| p.trim().parse().map_err(|_| format!("bad number `{p}`"));
    Ok((num(a)?, num(b)?))
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_class(s: &str) -> std::result::Result<ClassLabel, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<WalkMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_text(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => Ok(RunConfig::default()),
    }
}

fn write_run_config(path: &Path, cfg: &RunConfig, argv: &[String]) -> Result<()> {
    let text = format!("# {}\n{}", argv.join(" "), cfg.to_text());
    io::write_atomic(path, text.as_bytes())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs a parsed command line. `argv` is echoed into `run.cfg`.
pub fn run(cli: Cli, argv: &[String]) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => cmd_phantom(a, argv),
        Command::Preprocess(a) => cmd_preprocess(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Generate(a) => cmd_generate(a, argv),
        Command::Walk(a) => cmd_walk(a, argv),
        Command::Evaluate(a) => cmd_evaluate(a, argv),
    }
}

/// Parses `argv` (program name first), runs it and returns the exit code.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn cmd_phantom(a: PhantomArgs, argv: &[String]) -> Result<()> {
    let mut cfg = base_config(a.config.as_deref())?;
    let spec = &mut cfg.phantom;
    if let Some(n) = a.per_class {
        *spec = spec.clone().with_per_class(n);
    }
    if let Some(s) = a.seed {
        spec.rng_seed = s;
    }
    if let Some(d) = a.dims {
        spec.dims = d;
    }
    if let Some(s) = a.spacing {
        spec.spacing_mm = s;
    }
    ensure_dir(&a.out)?;
    let mut rows = Vec::new();
    for item in iter_corpus(&cfg.phantom)? {
        io::write_pvol(&a.out.join(item.file_name()), &item.volume)?;
        rows.push(item.manifest_row());
    }
    write_run_config(&a.out.join(RUN_CONFIG_FILE), &cfg, argv)?;
    io::write_manifest(&a.out.join(MANIFEST_FILE), &rows)
}

pub fn cmd_preprocess(a: PreprocessArgs, argv: &[String]) -> Result<()> {
    let mut cfg = base_config(a.config.as_deref())?;
    let p = &mut cfg.pipeline;
    if let Some(v) = a.suv_max {
        p.suv_max = v;
    }
    if let Some(v) = a.spacing {
        p.target_spacing_mm = v;
    }
    if let Some(v) = a.axis {
        p.projection_axis = v;
    }
    if let Some((h, w)) = a.canvas {
        p.canvas = Canvas::new(h, w);
    }
    p.validate()?;
    let manifest = a.input.join(MANIFEST_FILE);
    if !manifest.exists() {
        return Err(Error::Data(format!("no {MANIFEST_FILE} in {}", a.input.display())));
    }
    let rows = io::read_manifest(&manifest)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} lists no volumes", manifest.display())));
    }
    ensure_dir(&a.out)?;
    let mut out_rows = Vec::with_capacity(rows.len());
    for r in rows {
        let v = io::read_pvol(&a.input.join(&r.path))?;
        let mip = preprocess(&v, r.label, &r.id, &cfg.pipeline)?;
        let path = format!("{}.pgm", r.id);
        io::write_pgm16(&a.out.join(&path), &mip.image)?;
        out_rows.push(ManifestRow { path, ..r });
    }
    write_run_config(&a.out.join(RUN_CONFIG_FILE), &cfg, argv)?;
    io::write_manifest(&a.out.join(MANIFEST_FILE), &out_rows)
}

pub fn cmd_train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let mut cfg = base_config(a.config.as_deref())?;
    let stages = a.stages.unwrap_or(cfg.model.upsample_stages);
    cfg.model = match a.preset {
        Some(Preset::Paper) => ModelConfig::default().with_stages(stages),
        Some(Preset::Desk) => ModelConfig::desk(stages),
        None if a.stages.is_some() => cfg.model.clone().with_stages(stages),
        None => cfg.model.clone(),
    };
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.beta1 {
        t.beta1 = v;
    }
    if let Some(v) = a.batch {
        t.batch_size = v;
    }
    if let Some(v) = a.seed {
        t.rng_seed = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;

    let data = TrainingSet::from_mips(&io::read_mip_dir(&a.data)?)?;
    let canvas = cfg.model.canvas();
    if data.canvas != canvas {
        return Err(Error::Shape(format!(
            "images in {} are {}x{} but {} upsampling stages give a {}x{} canvas",
            a.data.display(),
            data.canvas.height,
            data.canvas.width,
            cfg.model.upsample_stages,
            canvas.height,
            canvas.width
        )));
    }
    ensure_dir(&a.out)?;
    let mut trainer = if a.resume {
        let mut ckpt = load_checkpoint(&a.out.join("checkpoint"))?;
        if ckpt.model_cfg != cfg.model {
            return Err(Error::CheckpointMismatch("model config differs from the checkpoint".into()));
        }
        let hist_path = a.out.join("history.csv");
        let text = fs::read_to_string(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
        let mut history = TrainHistory::from_csv(&text)?;
        history.rows.truncate(ckpt.epoch);
        ckpt.train_cfg.epochs = cfg.train.epochs;
        cfg.train = ckpt.train_cfg.clone();
        Trainer::resume(ckpt, history)
    } else {
        Trainer::new(&cfg.model, &cfg.train)?
    };
    cfg.pipeline.canvas = canvas;
    write_run_config(&a.out.join(RUN_CONFIG_FILE), &cfg, argv)?;
    trainer.run(&data, Some(&a.out))
}

fn open_checkpoint(dir: &Path) -> Result<ModelCheckpoint> {
    let dir = if dir.join("meta").exists() {
        dir.to_path_buf()
    } else {
        dir.join("checkpoint")
    };
    load_checkpoint(&dir)
}

fn config_from_checkpoint(ckpt: &ModelCheckpoint, file: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = base_config(file)?;
    cfg.model = ckpt.model_cfg.clone();
    cfg.train = ckpt.train_cfg.clone();
    cfg.pipeline.canvas = ckpt.model_cfg.canvas();
    Ok(cfg)
}

pub fn cmd_generate(a: GenerateArgs, argv: &[String]) -> Result<()> {
    if a.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()));
    }
    let ckpt = open_checkpoint(&a.ckpt)?;
    let cfg = config_from_checkpoint(&ckpt, None)?;
    let seeds = sample_seeds(a.seed, a.count, ckpt.model_cfg.latent_dim);
    let (images, _) = generate_class(&ckpt.params, a.class, &seeds)?;
    ensure_dir(&a.out)?;
    let mut rows = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let id = format!("{}_{i:04}", a.class);
        let path = format!("{id}.pgm");
        io::write_pgm16(&a.out.join(&path), img)?;
        rows.push(ManifestRow { id, label: a.class, path });
    }
    write_run_config(&a.out.join(RUN_CONFIG_FILE), &cfg, argv)?;
    io::write_manifest(&a.out.join(MANIFEST_FILE), &rows)
}

fn reference_images(dir: &Path, canvas: Canvas) -> Result<Vec<crate::pipeline::Image2D>> {
    let mips = io::read_mip_dir(dir)?;
    if mips.is_empty() {
        return Err(Error::Data(format!("{} holds no images", dir.display())));
    }
    if mips.iter().any(|m| (m.image.height, m.image.width) != (canvas.height, canvas.width)) {
        return Err(Error::CheckpointMismatch(format!(
            "images in {} are not on the checkpoint's {}x{} canvas",
            dir.display(),
            canvas.height,
            canvas.width
        )));
    }
    Ok(mips.into_iter().map(|m| m.image).collect())
}

pub fn cmd_walk(a: WalkArgs, argv: &[String]) -> Result<()> {
    let ckpt = open_checkpoint(&a.ckpt)?;
    let mut cfg = config_from_checkpoint(&ckpt, a.config.as_deref())?;
    let w = &mut cfg.walk;
    if let Some(v) = a.mode {
        w.mode = v;
    }
    if let Some(v) = a.steps {
        w.steps = v;
    }
    if let Some(v) = a.from_class {
        w.from_class = v;
    }
    if let Some(v) = a.to_class {
        w.to_class = v;
    }
    if let Some(v) = a.seed {
        w.seed = v;
    }
    if let Some(v) = a.a {
        w.a = v;
    }
    if let Some(v) = a.b {
        w.b = v;
    }
    let spec = cfg.walk.to_spec(ckpt.model_cfg.latent_dim)?;
    let reference = a
        .data
        .as_deref()
        .map(|d| reference_images(d, ckpt.model_cfg.canvas()))
        .transpose()?;
    let report = walk(&GanRenderer { params: &ckpt.params }, &spec, reference.as_deref())?;
    ensure_dir(&a.out)?;
    io::write_pgm16(&a.out.join("strip.pgm"), &report.strip()?)?;
    write_run_config(&a.out.join(RUN_CONFIG_FILE), &cfg, argv)?;
    io::write_atomic(&a.out.join("walk.csv"), report.to_csv().as_bytes())
}

pub fn cmd_evaluate(a: EvaluateArgs, argv: &[String]) -> Result<()> {
    if a.per_class == 0 {
        return Err(Error::Config("--per-class must be at least 1".into()));
    }
    let ckpt = open_checkpoint(&a.ckpt)?;
    let cfg = config_from_checkpoint(&ckpt, a.config.as_deref())?;
    let canvas = ckpt.model_cfg.canvas();
    let reference = reference_images(&a.data, canvas)?;
    let pipeline = PipelineConfig { canvas, ..cfg.pipeline.clone() };
    let classifier = RegionClassifier::new(&cfg.phantom, &pipeline);
    let report = evaluate(&ckpt.params, &classifier, a.per_class, a.seed, Some(&reference))?;
    let mut cfg_path = a.out.clone().into_os_string();
    cfg_path.push(".cfg");
    write_run_config(Path::new(&cfg_path), &cfg, argv)?;
    io::write_atomic(&a.out, report.to_csv().as_bytes())
}
