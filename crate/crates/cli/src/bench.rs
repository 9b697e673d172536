//! Benchmark sweeps. Each run gets its seed from `derive_seed(master, name, repeat)`,
//! so the worker count never changes a result.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use formula_distill_core::datagen::{add_noise, versatility_intervals, DataError, PointSet};
use formula_distill_core::history::read_corpus;
use formula_distill_core::registry::{BenchmarkEntry, Registry};
use formula_distill_core::seed::{derive_seed, rng_from};
use formula_distill_model::checkpoint;
use formula_distill_model::inference::{generate, InferenceResult};
use formula_distill_model::train::train;
use formula_distill_model::SeqModel;

use crate::config::RunConfig;
use crate::error::CliError;

pub fn load_model(cfg: &RunConfig) -> Result<SeqModel, CliError> {
    let path = cfg.checkpoint.as_deref().ok_or_else(|| CliError::Config("`checkpoint` is required for this command".into()))?;
    checkpoint::load(Path::new(path)).map_err(|e| CliError::from(e).with_context(path))
}

impl CliError {
    fn with_context(self, what: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{what}: {m}")),
        }
    }
}

/// Benchmarks of the configured group the model can take.
fn entries<'a>(cfg: &RunConfig, registry: &'a Registry, model: &SeqModel) -> Result<Vec<&'a BenchmarkEntry>, CliError> {
    let all = registry.select(&cfg.group)?;
    let max = model.config.max_vars;
    let (ok, skipped): (Vec<_>, Vec<_>) = all.into_iter().partition(|e| e.dims() <= max);
    for e in &skipped {
        log::warn!("skipping {}: {} variables, model takes {max}", e.name, e.dims());
    }
    if ok.is_empty() {
        return Err(CliError::Config(format!("group `{}` has no benchmark with at most {max} variables", cfg.group)));
    }
    Ok(ok)
}

/// Map `f` over `0..n` on `workers` threads, keeping index order.
fn par_map<T, F>(workers: usize, n: usize, f: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(usize) -> Result<T, CliError> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Report score of one run: best R² floored at 0; no expression scores 0.
pub fn run_score(r: &InferenceResult) -> f64 {
    if r.best_r2.is_finite() {
        r.best_r2.max(0.0)
    } else {
        0.0
    }
}

fn solve(model: &SeqModel, cfg: &RunConfig, points: &PointSet, seed: u64) -> Result<InferenceResult, CliError> {
    Ok(generate(model, points, &cfg.inference_config(seed, false)?)?)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Student-t half-width of the mean at `confidence`; undefined below two samples.
pub fn ci_half_width(v: &[f64], confidence: f64) -> f64 {
    let n = v.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    t.inverse_cdf(0.5 + confidence / 2.0) * (var / n as f64).sqrt()
}

pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

/// Scores over `entries × repeats` on the model, with `points_for` producing
/// the data of one run (or `None` to skip it).
fn sweep<P>(model: &SeqModel, cfg: &RunConfig, entries: &[&BenchmarkEntry], points_for: P) -> Result<Vec<Vec<f64>>, CliError>
where
    P: Fn(&BenchmarkEntry, u64) -> Result<Option<PointSet>, CliError> + Sync + Send,
{
    let jobs: Vec<(usize, usize)> = (0..entries.len()).flat_map(|e| (0..cfg.repeats).map(move |r| (e, r))).collect();
    let scores = par_map(cfg.workers, jobs.len(), |j| {
        let (e, r) = jobs[j];
        let entry = entries[e];
        let seed = derive_seed(cfg.seed, &entry.name, r as u64);
        match points_for(entry, seed)? {
            Some(points) => Ok(Some(run_score(&solve(model, cfg, &points, seed)?))),
            None => Ok(None),
        }
    })?;
    let mut per_entry = vec![Vec::new(); entries.len()];
    for ((e, _), s) in jobs.iter().zip(scores) {
        if let Some(s) = s {
            per_entry[*e].push(s);
        }
    }
    Ok(per_entry)
}

fn default_points(entry: &BenchmarkEntry, seed: u64) -> Result<Option<PointSet>, CliError> {
    Ok(Some(entry.sample_default(seed)?))
}

/// `name,mean_r2,ci95,repeats`, one row per benchmark.
pub fn bench_r2(cfg: &RunConfig) -> Result<String, CliError> {
    let model = load_model(cfg)?;
    let registry = Registry::from_env()?;
    let entries = entries(cfg, &registry, &model)?;
    let scores = sweep(&model, cfg, &entries, default_points)?;
    let mut out = String::from("name,mean_r2,ci95,repeats\n");
    for (e, s) in entries.iter().zip(&scores) {
        writeln!(out, "{},{},{},{}", e.name, fmt(mean(s)), fmt(ci_half_width(s, cfg.confidence)), s.len()).expect("string write");
    }
    Ok(out)
}

/// `level,mean_r2`: the group mean at each noise level. The same clean points
/// are reused across levels; R² is measured against the noisy targets.
pub fn bench_noise(cfg: &RunConfig) -> Result<String, CliError> {
    let model = load_model(cfg)?;
    let registry = Registry::from_env()?;
    let entries = entries(cfg, &registry, &model)?;
    let mut out = String::from("level,mean_r2\n");
    for (k, level) in cfg.noise_levels()?.into_iter().enumerate() {
        let scores = sweep(&model, cfg, &entries, |entry, seed| {
            let clean = entry.sample_default(seed)?;
            let mut rng = rng_from(derive_seed(seed, "noise", k as u64));
            let y = add_noise(&clean.y, level, &mut rng, false)?;
            Ok(Some(PointSet::new(clean.x, y, clean.spec, level)?))
        })?;
        writeln!(out, "{level:.2},{}", fmt(mean(&scores.concat()))).expect("string write");
    }
    Ok(out)
}

/// `lo,hi,mean_r2` for each of the ten test intervals. Draws where the target
/// is undefined are skipped.
pub fn bench_versatility(cfg: &RunConfig) -> Result<String, CliError> {
    let model = load_model(cfg)?;
    let registry = Registry::from_env()?;
    let entries = entries(cfg, &registry, &model)?;
    let mut out = String::from("lo,hi,mean_r2\n");
    for (lo, hi) in versatility_intervals() {
        let scores = sweep(&model, cfg, &entries, |entry, seed| {
            match entry.sample(&entry.spec.with_interval(lo, hi).with_seed(seed), false) {
                Ok(p) => Ok(Some(p)),
                Err(DataError::NonFinite(name)) => {
                    log::warn!("{name} undefined on [{lo}, {hi}] for seed {seed}; skipped");
                    Ok(None)
                }
                Err(e) => Err(e.into()),
            }
        })?;
        writeln!(out, "{lo},{hi},{}", fmt(mean(&scores.concat()))).expect("string write");
    }
    Ok(out)
}

/// `name,repeat,seconds,best_r2,n_intermediate,terminated_by`, one row per run.
pub fn bench_timing(cfg: &RunConfig) -> Result<String, CliError> {
    let model = load_model(cfg)?;
    let registry = Registry::from_env()?;
    let entries = entries(cfg, &registry, &model)?;
    let wallclock = cfg.wallclock.unwrap_or(true);
    let jobs: Vec<(usize, usize)> = (0..entries.len()).flat_map(|e| (0..cfg.repeats).map(move |r| (e, r))).collect();
    let rows = par_map(cfg.workers, jobs.len(), |j| {
        let (e, r) = jobs[j];
        let entry = entries[e];
        let seed = derive_seed(cfg.seed, &entry.name, r as u64);
        let points = entry.sample_default(seed)?;
        let started = Instant::now();
        let res = generate(&model, &points, &cfg.inference_config(seed, wallclock)?)?;
        let secs = if wallclock { started.elapsed().as_secs_f64() } else { 0.0 };
        let term = serde_json::to_value(res.terminated_by).expect("serializable");
        Ok(format!(
            "{},{r},{secs:.6},{},{},{}\n",
            entry.name,
            fmt(run_score(&res)),
            res.n_intermediate,
            term.as_str().unwrap_or_default()
        ))
    })?;
    Ok(String::from("name,repeat,seconds,best_r2,n_intermediate,terminated_by\n") + &rows.concat())
}

/// `size,records,mean_r2`: train on nested seeded subsets of the corpus and
/// score each model on the benchmark group.
pub fn bench_datasize(cfg: &RunConfig) -> Result<String, CliError> {
    use rand::seq::SliceRandom;
    let path = cfg.corpus.as_deref().ok_or_else(|| CliError::Config("`corpus` is required for bench-datasize".into()))?;
    let records = read_corpus(Path::new(path))?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng_from(derive_seed(cfg.seed, "datasize", 0)));
    let registry = Registry::from_env()?;
    let mut out = String::from("size,records,mean_r2\n");
    for size in cfg.corpus_sizes()? {
        let n = size.min(records.len());
        if n < size {
            log::warn!("corpus has {} records; size {size} uses all of them", records.len());
        }
        let subset: Vec<_> = order[..n].iter().map(|&i| records[i].clone()).collect();
        let (model, report) = train(&subset, &cfg.model_config(), &cfg.train_config())?;
        log::info!("size {size}: {} steps, final loss {:.4}", report.steps, report.final_loss);
        let entries = entries(cfg, &registry, &model)?;
        let scores = sweep(&model, cfg, &entries, default_points)?;
        writeln!(out, "{size},{n},{}", fmt(mean(&scores.concat()))).expect("string write");
    }
    Ok(out)
}
