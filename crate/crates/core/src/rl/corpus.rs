//! Corpus collection: synthesize targets, search each, stream retained histories.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{sample_points, DataError, PointSet, SamplingSpec, TRAIN_INTERVAL};
use crate::expr::{evaluate, parse_preorder, sample_skeleton, ExprError, SkeletonConfig, Token};
use crate::history::{CorpusWriter, HistoryError, HistoryRecord};
use crate::rl::search::{run_search, DiscardReason, SearchConfig, SearchError, SearchOutcome};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    History(#[from] HistoryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub n_targets: usize,
    pub skeleton: SkeletonConfig,
    pub search: SearchConfig,
    pub n_points: usize,
    pub interval: (f64, f64),
    /// Target constants are drawn as ±U(lo, hi).
    pub const_range: (f64, f64),
    /// Redraws allowed when a target is undefined on its points or constant.
    pub target_attempts: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_targets: 100,
            skeleton: SkeletonConfig { max_len: 15, max_depth: Some(4), ..SkeletonConfig::default() },
            search: SearchConfig::default(),
            n_points: 20,
            interval: TRAIN_INTERVAL,
            const_range: (0.5, 4.0),
            target_attempts: 100,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub targets: usize,
    pub solved: usize,
    pub discarded_length: usize,
    pub discarded_epochs: usize,
    /// Targets for which no usable expression was drawn.
    pub skipped: usize,
    pub tokens: usize,
}

/// A synthetic target: its expression and sampled observations.
#[derive(Debug, Clone)]
pub struct Target {
    pub tokens: Vec<Token>,
    pub constants: Vec<f64>,
    pub points: PointSet,
}

/// Draw target `index`; `None` when every attempt was unusable.
pub fn synthesize_target(cfg: &CollectConfig, index: u64) -> Result<Option<Target>, CollectError> {
    let mut rng = rng_from(derive_seed(cfg.seed, "target", index));
    for attempt in 0..cfg.target_attempts {
        let tokens = sample_skeleton(&mut rng, &cfg.skeleton)?;
        let tree = parse_preorder(&tokens)?;
        let dims = tree.max_var() as usize;
        if dims == 0 {
            continue;
        }
        let (lo, hi) = cfg.const_range;
        let constants: Vec<f64> = (0..tree.n_consts())
            .map(|_| {
                let m = rng.random_range(lo..=hi);
                if rng.random::<bool>() { m } else { -m }
            })
            .collect();
        let spec = SamplingSpec::uniform(cfg.interval.0, cfg.interval.1, cfg.n_points, dims, derive_seed(cfg.seed, "points", index ^ ((attempt as u64) << 32)));
        let x = sample_points(&spec)?;
        let Ok(y) = evaluate(&tree, x.view(), &constants) else { continue };
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        if !(var > 1e-10 * (1.0 + mean * mean)) || y.iter().any(|v| v.abs() > 1e8) {
            continue;
        }
        let points = PointSet::new(x, y, spec, 0.0)?;
        return Ok(Some(Target { tokens, constants, points }));
    }
    Ok(None)
}

#[derive(Debug, Clone)]
pub enum TargetOutcome {
    Retained(Box<HistoryRecord>),
    Discarded(DiscardReason),
    Skipped,
}

/// Synthesize and search target `index`.
pub fn collect_one(cfg: &CollectConfig, index: u64) -> Result<TargetOutcome, CollectError> {
    let Some(target) = synthesize_target(cfg, index)? else {
        return Ok(TargetOutcome::Skipped);
    };
    let seed = derive_seed(cfg.seed, "search", index);
    let search = SearchConfig { seed, ..cfg.search.clone() };
    let run = run_search(&target.points, &search)?;
    Ok(match run.outcome {
        SearchOutcome::Retained(h) => {
            let mut rec = HistoryRecord::new(format!("t{index:07}"), &target.points, &h, seed);
            rec.target = Some(target.tokens);
            rec.target_constants = target.constants;
            TargetOutcome::Retained(Box::new(rec))
        }
        SearchOutcome::Discarded { reason, .. } => TargetOutcome::Discarded(reason),
    })
}

/// Targets per parallel chunk; output order is the target order regardless of workers.
const CHUNK: usize = 32;

/// Run every target and hand retained records to `sink` in target order.
pub fn collect_with<F>(cfg: &CollectConfig, mut sink: F) -> Result<CorpusStats, CollectError>
where
    F: FnMut(HistoryRecord) -> Result<(), CollectError>,
{
    if cfg.n_points == 0 {
        return Err(CollectError::Config("n_points must be positive".into()));
    }
    cfg.search.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| CollectError::Config(e.to_string()))?;
    let mut stats = CorpusStats::default();
    let indices: Vec<u64> = (0..cfg.n_targets as u64).collect();
    for chunk in indices.chunks(CHUNK) {
        let outcomes: Vec<Result<TargetOutcome, CollectError>> =
            pool.install(|| chunk.par_iter().map(|&i| collect_one(cfg, i)).collect());
        for out in outcomes {
            stats.targets += 1;
            match out? {
                TargetOutcome::Retained(rec) => {
                    stats.solved += 1;
                    stats.tokens += rec.tokens.len();
                    sink(*rec)?;
                }
                TargetOutcome::Discarded(DiscardReason::LengthCap) => stats.discarded_length += 1,
                TargetOutcome::Discarded(DiscardReason::EpochLimit) => stats.discarded_epochs += 1,
                TargetOutcome::Skipped => stats.skipped += 1,
            }
        }
        log::info!("collected {}/{} targets, {} retained", stats.targets, cfg.n_targets, stats.solved);
    }
    Ok(stats)
}

/// Collect a corpus into the JSONL file at `out`.
pub fn collect_corpus(cfg: &CollectConfig, out: &Path) -> Result<CorpusStats, CollectError> {
    let mut writer = CorpusWriter::create(out)?;
    let stats = collect_with(cfg, |rec| Ok(writer.write(&rec)?))?;
    writer.finish()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{read_corpus, MAX_HISTORY_TOKENS};

    fn small() -> CollectConfig {
        CollectConfig {
            n_targets: 6,
            search: SearchConfig { epochs: 30, batch_size: 32, ..Default::default() },
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let stats = collect_corpus(&CollectConfig { n_targets: 0, ..Default::default() }, &path).unwrap();
        assert_eq!(stats, CorpusStats::default());
        assert!(read_corpus(&path).unwrap().is_empty());
    }

    #[test]
    fn written_records_revalidate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let stats = collect_corpus(&small(), &path).unwrap();
        let recs = read_corpus(&path).unwrap();
        assert_eq!(recs.len(), stats.solved);
        assert_eq!(stats.targets, 6);
        for r in &recs {
            r.validate(MAX_HISTORY_TOKENS).unwrap();
            let (a, b) = (r.spec.a, r.spec.b);
            assert_eq!((a, b), (-10.0, 10.0));
        }
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let dir = tempfile::tempdir().unwrap();
        let one = dir.path().join("1.jsonl");
        let four = dir.path().join("4.jsonl");
        collect_corpus(&small(), &one).unwrap();
        collect_corpus(&CollectConfig { workers: 4, ..small() }, &four).unwrap();
        assert_eq!(std::fs::read(one).unwrap(), std::fs::read(four).unwrap());
    }
}
