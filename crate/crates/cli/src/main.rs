//! `mccl`: prepare rating data, then train, evaluate, ablate and sweep.
//!
//! Exit status is 0 on success, 1 when a pipeline step fails and 2 for
//! usage errors (bad flags, unknown config keys, invalid overrides).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mccl::dataset::{dataset_stats, five_core_filter, load_ratings, split, RatingScale, SplitDataset};
use mccl::metrics::{EvalOptions, DEFAULT_CUTOFF, DEFAULT_NEGATIVES, DEFAULT_RELEVANCE_THRESHOLD};
use mccl::synthetic::{planted, PlantedConfig};
use mccl::training::{self, Checkpoint, JsonLinesLog, SweepParam, TrainConfig, TrainError};
use serde_json::json;

const CHECKPOINT_DIR: &str = "checkpoint";
const LOG_FILE: &str = "log.jsonl";

#[derive(Parser)]
#[command(name = "mccl", version, about = "Two-view contrastive matrix completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, index and split a ratings file into a data directory.
    Prepare(PrepareArgs),
    /// Train a model and write its best checkpoint.
    Train(TrainArgs),
    /// Print the metric report of a checkpoint on the test part.
    Evaluate(EvaluateArgs),
    /// Train and evaluate vgae-only, denoise-only and full models.
    Ablate(AblateArgs),
    /// Train and evaluate once per value of a loss coefficient.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// `user,item,rating[,timestamp]` lines.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generate the planted low-rank demo dataset instead of reading a file.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value = "1:5")]
    scale: RatingScale,
    /// Split seed (and generator seed with --synthetic).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep every interaction instead of applying the five-core filter.
    #[arg(long)]
    no_filter: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    data: PathBuf,
    /// JSON training config; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `dotted.key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Training seed; takes precedence over the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    cutoff: usize,
    /// Sampled negatives per user in the ranking protocol.
    #[arg(long, default_value_t = DEFAULT_NEGATIVES)]
    negatives: usize,
    #[arg(long, default_value_t = DEFAULT_RELEVANCE_THRESHOLD)]
    relevance_threshold: f64,
    /// Seed of the negative sampler.
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
}

impl EvalArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            cutoff: self.cutoff,
            negatives: self.negatives,
            relevance_threshold: self.relevance_threshold,
            seed: self.eval_seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory (manifest.json + params.bin).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write `report.json` here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Same as --eval-seed.
    #[arg(long, conflicts_with = "eval_seed")]
    seed: Option<u64>,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    eval: EvalArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long, required_unless_present = "preset")]
    param: Option<SweepParam>,
    /// Comma-separated coefficient values.
    #[arg(long, value_delimiter = ',', requires = "param", conflicts_with = "preset")]
    values: Vec<f64>,
    /// Named grid: alpha, alpha-setup, beta or lambda.
    #[arg(long)]
    preset: Option<String>,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Run(e.to_string()),
        }
    }
}

impl From<mccl::dataset::DatasetError> for Failure {
    fn from(e: mccl::dataset::DatasetError) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(format!("Io: {e}"))
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serialises");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serialises"));
}

fn config_of(run: &RunArgs) -> Result<TrainConfig> {
    let mut cfg = match &run.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    for o in &run.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads data and config and creates the output directory, with the
/// effective config saved next to the results.
fn setup(run: &RunArgs) -> Result<(SplitDataset, TrainConfig, JsonLinesLog<BufWriter<File>>)> {
    let cfg = config_of(run)?;
    let data = SplitDataset::load_dir(&run.data)?;
    fs::create_dir_all(&run.out)?;
    write_json(&run.out.join("config.json"), &serde_json::to_value(&cfg).expect("config serialises"))?;
    let log = JsonLinesLog::new(BufWriter::new(File::create(run.out.join(LOG_FILE))?));
    Ok((data, cfg, log))
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let raw = match &args.data {
        Some(path) => load_ratings(path, args.scale)?,
        None => planted(&PlantedConfig { seed: args.seed, ..Default::default() }, args.scale)?.0,
    };
    let filtered = if args.no_filter { raw } else { five_core_filter(&raw)? };
    let parts = split(&filtered, args.seed)?;
    parts.save_dir(&args.out)?;
    print_json(&json!({ "out": args.out, "stats": dataset_stats(&filtered) }));
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let (data, cfg, mut log) = setup(&args.run)?;
    let out = training::train(&data, &cfg, &mut log)?;
    log.into_inner().flush()?;
    out.checkpoint.save(&args.run.out.join(CHECKPOINT_DIR))?;
    print_json(&json!({
        "checkpoint": args.run.out.join(CHECKPOINT_DIR),
        "best_epoch": out.checkpoint.best_epoch,
        "best_val_rmse": out.checkpoint.best_val_rmse,
        "epochs": out.epochs.len(),
    }));
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let data = SplitDataset::load_dir(&args.data)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let mut opts = args.eval.options();
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    let report = serde_json::to_value(training::evaluate(&checkpoint, &data, &opts)?).expect("report serialises");
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("report.json"), &report)?;
    }
    print_json(&report);
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    let (data, cfg, mut log) = setup(&args.run)?;
    let runs = training::ablate(&data, &cfg, &args.eval.options(), &mut log)?;
    log.into_inner().flush()?;
    let mut reports = serde_json::Map::new();
    for r in &runs {
        let mode = r.checkpoint.config.ablation_mode.name();
        r.checkpoint.save(&args.run.out.join(mode).join(CHECKPOINT_DIR))?;
        reports.insert(mode.to_string(), serde_json::to_value(&r.report).expect("report serialises"));
    }
    let table = training::ablation_table(&runs);
    fs::write(args.run.out.join("ablation.csv"), &table)?;
    write_json(&args.run.out.join("reports.json"), &reports.into())?;
    print!("{table}");
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let (param, values) = match (&args.preset, args.param) {
        (Some(name), _) => match training::sweep_preset(name) {
            Some((p, v)) => (p, v.to_vec()),
            None => {
                let known: Vec<_> = training::SWEEP_PRESETS.iter().map(|p| p.0).collect();
                return Err(Failure::Usage(format!("unknown preset `{name}` (known: {})", known.join(", "))));
            }
        },
        (None, Some(p)) if !args.values.is_empty() => (p, args.values.clone()),
        (None, _) => return Err(Failure::Usage("--param needs --values".into())),
    };
    let (data, cfg, mut log) = setup(&args.run)?;
    let rows = training::sweep(&data, &cfg, param, &values, &args.eval.options(), &mut log)?;
    log.into_inner().flush()?;
    let table = training::sweep_table(param, &rows);
    fs::write(args.run.out.join("sweep.csv"), &table)?;
    write_json(&args.run.out.join("series.json"), &training::sweep_series(param, &rows))?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("see `mccl --help` for usage");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
