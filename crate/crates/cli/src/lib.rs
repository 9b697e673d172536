//! Command-line driver: data generation, history collection, training,
//! inference and the benchmark reports.
//!
//! Every report is a CSV whose first line is `# config: {...}`, the resolved
//! configuration minus keys that only affect scheduling.

pub mod bench;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use formula_distill_core::datagen::{add_noise, PointSet};
use formula_distill_core::history::{mix_variants, read_corpus, split_corpus, write_corpus};
use formula_distill_core::registry::Registry;
use formula_distill_core::rl::corpus::collect_corpus;
use formula_distill_core::seed::{derive_seed, rng_from};
use formula_distill_core::vocab::Vocab;
use formula_distill_model::checkpoint;
use formula_distill_model::inference::generate;
use formula_distill_model::train::train;

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "formula-distill", version, about = "Symbolic regression by distilled search histories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a benchmark's data set (optionally noisy) to CSV.
    GenData,
    /// Run the searcher on synthetic targets and stream retained histories.
    Collect,
    /// Replace a fraction of records by their shortcut histories.
    Shortcut,
    /// Split a corpus into `train.jsonl` and `val.jsonl` under `--out`.
    Split,
    /// Train a model on a corpus and write a checkpoint.
    Train,
    /// Run guided generation on one data set.
    Infer,
    /// Mean R² and confidence half-width per benchmark.
    BenchR2,
    /// Mean R² per noise level.
    BenchNoise,
    /// Mean R² per test interval.
    BenchVersatility,
    /// Per-run elapsed time and best R².
    BenchTiming,
    /// Retrain on corpus prefixes of several sizes and evaluate each.
    BenchDatasize,
    /// Print the token table as JSON.
    Vocab,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true)]
    pub checkpoint: Option<String>,
    #[arg(long, global = true)]
    pub corpus: Option<String>,
    /// Benchmark group, comma-separated names, or `all`.
    #[arg(long, global = true)]
    pub group: Option<String>,
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    #[arg(long, global = true)]
    pub confidence: Option<f64>,
    /// Noise levels as `start:stop:step` or a comma list.
    #[arg(long, global = true)]
    pub levels: Option<String>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub benchmark: Option<String>,
    /// Data set CSV for `infer`.
    #[arg(long, global = true)]
    pub points: Option<String>,
    /// Comma list of corpus sizes for `bench-datasize`.
    #[arg(long, global = true)]
    pub sizes: Option<String>,
    #[arg(long, global = true)]
    pub n_targets: Option<usize>,
    /// Report zero elapsed time so output is byte-stable.
    #[arg(long, global = true)]
    pub no_wallclock: bool,
    /// Override any config key: `--set key=value` (value parsed as JSON when possible).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Map<String, Value>, CliError> {
        let mut m = Map::new();
        for item in &self.set {
            let (k, v) = config::parse_set(item)?;
            m.insert(k, v);
        }
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("seed", self.seed.map(Value::from));
        put("out", self.out.clone().map(Value::from));
        put("checkpoint", self.checkpoint.clone().map(Value::from));
        put("corpus", self.corpus.clone().map(Value::from));
        put("group", self.group.clone().map(Value::from));
        put("repeats", self.repeats.map(Value::from));
        put("confidence", self.confidence.map(Value::from));
        put("levels", self.levels.clone().map(Value::from));
        put("workers", self.workers.map(Value::from));
        put("benchmark", self.benchmark.clone().map(Value::from));
        put("points", self.points.clone().map(Value::from));
        put("sizes", self.sizes.clone().map(Value::from));
        put("n_targets", self.n_targets.map(Value::from));
        put("wallclock", self.no_wallclock.then_some(Value::Bool(false)));
        Ok(m)
    }
}

/// Parse `args` (program name first), run, and return the exit code.
/// Errors are printed to stderr as one JSON line.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(cli.common.config.as_deref(), cli.common.overrides()?)?;
    log::debug!("resolved config: {}", cfg.header_json());
    match cli.command {
        Command::GenData => gen_data(&cfg),
        Command::Collect => collect(&cfg),
        Command::Shortcut => shortcut(&cfg),
        Command::Split => split(&cfg),
        Command::Train => train_cmd(&cfg),
        Command::Infer => infer(&cfg),
        Command::BenchR2 => emit(&cfg, &bench::bench_r2(&cfg)?),
        Command::BenchNoise => emit(&cfg, &bench::bench_noise(&cfg)?),
        Command::BenchVersatility => emit(&cfg, &bench::bench_versatility(&cfg)?),
        Command::BenchTiming => emit(&cfg, &bench::bench_timing(&cfg)?),
        Command::BenchDatasize => emit(&cfg, &bench::bench_datasize(&cfg)?),
        Command::Vocab => write_out(cfg.out.as_deref(), &(Vocab::new().to_json() + "\n")),
    }
}

fn require<'a>(v: &'a Option<String>, key: &str) -> Result<&'a str, CliError> {
    v.as_deref().ok_or_else(|| CliError::Config(format!("`{key}` is required for this command")))
}

/// Write to `path`, or stdout when none is given.
fn write_out(path: Option<&str>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{p}: {e}"))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// A CSV report prefixed by the config header line.
fn emit(cfg: &RunConfig, body: &str) -> Result<(), CliError> {
    write_out(cfg.out.as_deref(), &format!("# config: {}\n{body}", cfg.header_json()))
}

/// A JSON summary wrapped with the resolved config, printed to stdout.
fn summary(cfg: &RunConfig, result: Value) -> Result<(), CliError> {
    let config: Value = serde_json::from_str(&cfg.header_json()).expect("header is JSON");
    let text = serde_json::to_string_pretty(&json!({ "config": config, "result": result })).expect("serializable");
    print!("{text}\n");
    Ok(())
}

fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let name = require(&cfg.benchmark, "benchmark")?;
    let registry = Registry::from_env()?;
    let entry = registry.lookup(name)?;
    let mut points = entry.sample(&entry.spec.with_seed(derive_seed(cfg.seed, name, 0)), cfg.cartesian)?;
    if cfg.noise_level > 0.0 {
        let mut rng = rng_from(derive_seed(cfg.seed, "noise", 0));
        let y = add_noise(&points.y, cfg.noise_level, &mut rng, false)?;
        points = PointSet::new(points.x, y, points.spec, cfg.noise_level)?;
    }
    match cfg.out.as_deref() {
        Some(p) => points.write(Path::new(p))?,
        None => print!("{}", points.to_csv()),
    }
    Ok(())
}

fn collect(cfg: &RunConfig) -> Result<(), CliError> {
    let out = require(&cfg.out, "out")?;
    let stats = collect_corpus(&cfg.collect_config(), Path::new(out))?;
    summary(cfg, serde_json::to_value(stats).expect("serializable"))
}

fn shortcut(cfg: &RunConfig) -> Result<(), CliError> {
    let records = read_corpus(Path::new(require(&cfg.corpus, "corpus")?))?;
    let mixed = mix_variants(&records, cfg.shortcut_ratio, cfg.seed)?;
    write_corpus(Path::new(require(&cfg.out, "out")?), &mixed)?;
    let shortcuts = mixed.iter().filter(|r| r.variant == formula_distill_core::history::Variant::Shortcut).count();
    summary(cfg, json!({ "records": mixed.len(), "shortcut": shortcuts }))
}

fn split(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = require(&cfg.corpus, "corpus")?;
    let dir = PathBuf::from(require(&cfg.out, "out")?);
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let (n_train, n_val) =
        split_corpus(Path::new(corpus), cfg.val_fraction, cfg.seed, &dir.join("train.jsonl"), &dir.join("val.jsonl"))?;
    summary(cfg, json!({ "train": n_train, "val": n_val }))
}

fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let records = read_corpus(Path::new(require(&cfg.corpus, "corpus")?))?;
    let out = require(&cfg.out, "out")?;
    let (model, report) = train(&records, &cfg.model_config(), &cfg.train_config())?;
    checkpoint::save(&model, Path::new(out))?;
    summary(cfg, serde_json::to_value(report).expect("serializable"))
}

fn infer(cfg: &RunConfig) -> Result<(), CliError> {
    let model = bench::load_model(cfg)?;
    let points = match (&cfg.points, &cfg.benchmark) {
        (Some(p), _) => PointSet::read(Path::new(p))?,
        (None, Some(name)) => {
            let registry = Registry::from_env()?;
            let entry = registry.lookup(name)?;
            entry.sample(&entry.spec.with_seed(derive_seed(cfg.seed, name, 0)), cfg.cartesian)?
        }
        (None, None) => return Err(CliError::Config("`points` or `benchmark` is required for infer".into())),
    };
    let inf = cfg.inference_config(cfg.seed, cfg.wallclock.unwrap_or(false))?;
    let result = generate(&model, &points, &inf)?;
    let text = serde_json::to_string_pretty(&result).expect("serializable") + "\n";
    write_out(cfg.out.as_deref(), &text)
}
