//! Command-line front end: argument parsing, config resolution, and the
//! subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::data::{augment_dataset, load_dataset, synth_generate, write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::hpo::{run_study, SearchSpace, StudyConfig};
use crate::interpret::{activation_maximize, DreamConfig};
use crate::loss::MetricsReport;
use crate::model::{build_ensemble, BuiltModel, ModelSpec};
use crate::rng::RngStream;
use crate::training::{evaluate, load_checkpoint, save_checkpoint, train, TrainConfig, TrainStatus};

pub const RESOLVED_FILE: &str = "config.resolved";
pub const RUNLOG_FILE: &str = "runlog.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

const SPLIT_STREAM: u64 = 0x5350_4c54;
const INIT_STREAM: u64 = 0x494e_4954;
const SYNTH_STREAM: u64 = 0x5359_4e54;
const AUGMENT_STREAM: u64 = 0x4155_474d;

#[derive(Debug, Parser)]
#[command(name = "heatmark", version, about = "Facial landmark regression on thermal images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic landmark dataset.
    Synth(SynthArgs),
    /// Add a left and a right rotation of every sample.
    Augment(AugmentArgs),
    /// Train a model and write its checkpoint, run log and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Hyperparameter search with pruning.
    Search(SearchArgs),
    /// Maximize one channel's activation from noise.
    Dream(DreamArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file of `key=value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable and applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Image size as HEIGHTxWIDTH.
    #[arg(long, default_value = "96x128")]
    pub dims: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub data: PathBuf,
    /// Seed for every random stream [default: run.seed from the config, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for metrics.tsv [default: the checkpoint's parent]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub trials: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Trials run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Seed for every random stream [default: run.seed from the config, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DreamArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Target layer name [default: dream.layer from the config, else stem.0]
    #[arg(long)]
    pub layer: Option<String>,
    /// Target channel [default: dream.channel from the config, else 0]
    #[arg(long)]
    pub channel: Option<usize>,
    /// Ascent steps [default: dream.steps from the config, else 50]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Step length [default: dream.step_size from the config, else 0.05]
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Seed for the starting noise [default: run.seed from the config, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(Error),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => e.fmt(f),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(r: Result<T>) -> CliResult<T> {
    r.map_err(CliError::Usage)
}

fn runtime<T>(r: Result<T>) -> CliResult<T> {
    r.map_err(CliError::Runtime)
}

/// Every key a run config may contain.
pub fn known_keys() -> Vec<String> {
    let mut keys: Vec<String> = ModelSpec::config_keys()
        .into_iter()
        .chain(TrainConfig::config_keys())
        .chain(DreamConfig::config_keys())
        .chain(["data.val_fraction", "run.seed"])
        .map(str::to_string)
        .collect();
    let searchable: Vec<String> = keys
        .iter()
        .filter(|k| k.starts_with("model.") || k.starts_with("train."))
        .map(|k| format!("search.{k}"))
        .collect();
    keys.extend(searchable);
    keys
}

/// Reads `--config`, applies `--set`, and rejects unknown keys.
pub fn resolve_config(args: &ConfigArgs) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(p) if !p.exists() => return Err(Error::Usage(format!("--config: no such file {}", p.display()))),
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    for pair in &args.set {
        cfg.set_pair(pair)?;
    }
    let known = known_keys();
    cfg.reject_unknown(&known.iter().map(String::as_str).collect::<Vec<_>>())?;
    Ok(cfg)
}

fn require_dir(flag: &str, p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{flag}: no such directory {}", p.display())))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn metrics_text(r: &MetricsReport) -> String {
    format!("{}\n{}\n", MetricsReport::TSV_HEADER, r.tsv_row())
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Usage(format!("--dims: expected HEIGHTxWIDTH, got `{s}`"));
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn load_data(flag: &str, dir: &Path) -> CliResult<Dataset> {
    usage(require_dir(flag, dir))?;
    usage(load_dataset(dir))
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let dims = usage(parse_dims(&a.dims))?;
    let d = usage(synth_generate(a.count, dims, &mut RngStream::new(a.seed, SYNTH_STREAM)))?;
    runtime(write_dataset(&d, &a.out))?;
    let resolved = format!("synth.count={}\nsynth.dims={}x{}\nrun.seed={}\n", a.count, dims.0, dims.1, a.seed);
    runtime(write_file(&a.out.join(RESOLVED_FILE), &resolved))
}

pub fn cmd_augment(a: &AugmentArgs) -> CliResult<()> {
    let d = load_data("--data", &a.data)?;
    let aug = augment_dataset(&d, &mut RngStream::new(a.seed, AUGMENT_STREAM));
    runtime(write_dataset(&aug, &a.out))?;
    runtime(write_file(&a.out.join(RESOLVED_FILE), &format!("run.seed={}\n", a.seed)))
}

struct TrainSetup {
    spec: ModelSpec,
    train: TrainConfig,
    val_fraction: f64,
    resolved: Config,
}

fn train_setup(cfg: &Config, seed: u64) -> Result<TrainSetup> {
    let spec = ModelSpec::from_config(cfg)?;
    let train = TrainConfig::from_config(cfg, seed)?;
    let val_fraction = cfg.get_or("data.val_fraction", 0.2)?;
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::config(format!("data.val_fraction {val_fraction} outside [0, 1)")));
    }
    let mut resolved = Config::new();
    spec.to_config(&mut resolved);
    train.to_config(&mut resolved);
    resolved.set("data.val_fraction", val_fraction);
    resolved.set("run.seed", seed);
    Ok(TrainSetup { spec, train, val_fraction, resolved })
}

fn seed_of(cfg: &Config, flag: Option<u64>) -> Result<u64> {
    match flag {
        Some(s) => Ok(s),
        None => cfg.get_or("run.seed", 0),
    }
}

fn split(d: &Dataset, fraction: f64, seed: u64) -> CliResult<(Dataset, Dataset)> {
    let (tr, va) = usage(d.split_off(fraction, &mut RngStream::new(seed, SPLIT_STREAM)))?;
    if tr.is_empty() || va.is_empty() {
        return Err(CliError::Usage(Error::Usage(format!(
            "{} samples cannot be split into nonempty training and validation sets",
            d.len()
        ))));
    }
    Ok((tr, va))
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let cfg = usage(resolve_config(&a.cfg))?;
    let seed = usage(seed_of(&cfg, a.seed))?;
    let setup = usage(train_setup(&cfg, seed))?;
    let data = load_data("--data", &a.data)?;
    let (tr, va) = split(&data, setup.val_fraction, seed)?;
    let model: BuiltModel =
        usage(build_ensemble(&setup.spec, &tr.input_shape(), &mut RngStream::new(seed, INIT_STREAM)))?;
    runtime(write_file(&a.out.join(RESOLVED_FILE), &setup.resolved.to_string()))?;
    let out = runtime(train(model, &tr, &va, &setup.train))?;
    runtime(out.log.write(&a.out.join(RUNLOG_FILE)))?;
    runtime(save_checkpoint(&out.model, &a.out.join(CHECKPOINT_DIR)))?;
    if let TrainStatus::Diverged { epoch } = out.status {
        return Err(CliError::Runtime(Error::Numeric(format!(
            "training diverged in epoch {epoch}; the checkpoint holds the last finite weights"
        ))));
    }
    let report = runtime(evaluate(&out.model, &va))?;
    runtime(write_file(&a.out.join(METRICS_FILE), &metrics_text(&report)))
}

/// Prints the metrics header and row; returns the report.
pub fn cmd_eval(a: &EvalArgs) -> CliResult<MetricsReport> {
    usage(require_dir("--checkpoint", &a.checkpoint))?;
    let model: BuiltModel = runtime(load_checkpoint(&a.checkpoint))?;
    let data = load_data("--data", &a.data)?;
    let report = runtime(evaluate(&model, &data))?;
    let text = metrics_text(&report);
    print!("{text}");
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    runtime(write_file(&dir.join(METRICS_FILE), &text))?;
    Ok(report)
}

pub fn cmd_search(a: &SearchArgs) -> CliResult<()> {
    let cfg = usage(resolve_config(&a.cfg))?;
    let seed = usage(seed_of(&cfg, a.seed))?;
    if a.trials == 0 || a.epochs == 0 {
        return Err(CliError::Usage(Error::Usage("--trials and --epochs must be at least 1".into())));
    }
    let setup = usage(train_setup(&cfg, seed))?;
    let space = usage(SearchSpace::from_config(&cfg))?;
    let data = load_data("--data", &a.data)?;
    let (tr, va) = split(&data, setup.val_fraction, seed)?;
    let mut base = cfg.clone();
    for k in cfg.keys().filter(|k| k.starts_with("search.")).map(str::to_string).collect::<Vec<_>>() {
        base.remove(&k);
    }
    let mut resolved = setup.resolved.clone();
    space.to_config(&mut resolved);
    runtime(write_file(&a.out.join(RESOLVED_FILE), &resolved.to_string()))?;
    let study_cfg = StudyConfig { budget: a.trials, epochs: a.epochs, jobs: a.jobs, seed, base };
    let outcome = runtime(run_study(&space, &study_cfg, &tr, &va, Some(&a.out)))?;
    if let Some(m) = &outcome.best_model {
        runtime(save_checkpoint(m, &a.out.join(CHECKPOINT_DIR)))?;
    }
    match outcome.study.best() {
        Some(b) => println!("best trial {} objective {}", b.id, b.objective().unwrap_or(f64::INFINITY)),
        None => println!("no trial completed"),
    }
    Ok(())
}

pub fn cmd_dream(a: &DreamArgs) -> CliResult<()> {
    let mut cfg = usage(resolve_config(&a.cfg))?;
    let seed = usage(seed_of(&cfg, a.seed))?;
    if let Some(v) = &a.layer {
        cfg.set("dream.layer", v);
    }
    if let Some(v) = a.channel {
        cfg.set("dream.channel", v);
    }
    if let Some(v) = a.steps {
        cfg.set("dream.steps", v);
    }
    if let Some(v) = a.step_size {
        cfg.set("dream.step_size", v);
    }
    let dc = usage(DreamConfig::from_config(&cfg, seed))?;
    usage(require_dir("--checkpoint", &a.checkpoint))?;
    let model: BuiltModel = runtime(load_checkpoint(&a.checkpoint))?;
    let dream = activation_maximize(&model, &dc).map_err(|e| match e {
        Error::Lookup { .. } | Error::Config(_) => CliError::Usage(e),
        e => CliError::Runtime(e),
    })?;
    let mut resolved = Config::new();
    dc.to_config(&mut resolved);
    resolved.set("run.seed", seed);
    runtime(write_file(&a.out.join(RESOLVED_FILE), &resolved.to_string()))?;
    runtime(dream.write(&a.out))
}

/// Parses `args` (program name first), runs the command, and returns the
/// exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Search(a) => cmd_search(a),
        Command::Dream(a) => cmd_dream(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
