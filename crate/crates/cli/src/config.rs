//! Flat JSON run configuration. Precedence: command line > file > defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use formula_distill_core::constopt::FitConfig;
use formula_distill_core::expr::{default_weights, SkeletonConfig};
use formula_distill_core::rl::corpus::CollectConfig;
use formula_distill_core::rl::search::SearchConfig;
use formula_distill_model::inference::{InferenceConfig, Sampling};
use formula_distill_model::train::TrainConfig;
use formula_distill_model::ModelConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub out: Option<String>,
    pub checkpoint: Option<String>,
    pub corpus: Option<String>,
    pub points: Option<String>,
    pub benchmark: Option<String>,
    pub group: String,
    pub repeats: usize,
    pub confidence: f64,
    pub levels: String,
    pub sizes: String,
    pub noise_level: f64,

    pub n_targets: usize,
    pub n_points: usize,
    pub target_max_depth: usize,
    pub target_max_len: usize,
    pub search_epochs: usize,
    pub search_batch: usize,
    pub search_max_expr_len: usize,
    pub risk_eps: f64,
    pub entropy_weight: f64,
    pub search_lr: f64,
    pub fit_restarts: usize,
    pub fit_max_iters: usize,

    pub shortcut_ratio: f64,
    pub val_fraction: f64,

    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_blocks: usize,
    pub n_dec_layers: usize,
    pub n_inducing: usize,
    pub n_seed_vectors: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub model_max_seq_len: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_epochs: usize,
    pub train_steps: usize,
    pub warmup: usize,

    pub max_seq_len: usize,
    pub max_expr_len: usize,
    pub sampling: String,
    pub top_k: usize,
    pub temperature: f64,
    /// Measure elapsed time; unset means on for `bench-timing` only.
    pub wallclock: Option<bool>,
    /// Full Cartesian grid for multi-variable grid specs.
    pub cartesian: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let collect = CollectConfig::default();
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        let inf = InferenceConfig::default();
        Self {
            seed: 0,
            workers: 1,
            out: None,
            checkpoint: None,
            corpus: None,
            points: None,
            benchmark: None,
            group: "nguyen".into(),
            repeats: 20,
            confidence: 0.95,
            levels: "0:0.10:0.01".into(),
            sizes: "1000,5000,20000,100000".into(),
            noise_level: 0.0,

            n_targets: collect.n_targets,
            n_points: collect.n_points,
            target_max_depth: 4,
            target_max_len: collect.skeleton.max_len,
            search_epochs: collect.search.epochs,
            search_batch: collect.search.batch_size,
            search_max_expr_len: collect.search.max_expr_len,
            risk_eps: collect.search.risk_eps,
            entropy_weight: collect.search.entropy_weight,
            search_lr: collect.search.lr,
            fit_restarts: FitConfig::default().restarts,
            fit_max_iters: FitConfig::default().max_iters,

            shortcut_ratio: 0.5,
            val_fraction: 0.1,

            d_model: model.d_model,
            n_heads: model.n_heads,
            n_enc_blocks: model.n_enc_blocks,
            n_dec_layers: model.n_dec_layers,
            n_inducing: model.n_inducing,
            n_seed_vectors: model.n_seed_vectors,
            d_ff: model.d_ff,
            dropout: model.dropout,
            model_max_seq_len: model.max_seq_len,
            lr: model.lr,
            batch_size: model.batch_size,
            train_epochs: train.epochs,
            train_steps: train.steps,
            warmup: train.warmup,

            max_seq_len: inf.max_seq_len,
            max_expr_len: inf.max_expr_len,
            sampling: "greedy".into(),
            top_k: 8,
            temperature: inf.temperature,
            wallclock: None,
            cartesian: false,
        }
    }
}

/// Keys left out of report headers: they change where or how fast a run
/// happens, never what it computes.
const EXECUTION_KEYS: [&str; 2] = ["workers", "out"];

impl RunConfig {
    /// Merge defaults, an optional JSON file and command-line overrides.
    pub fn resolve(file: Option<&Path>, overrides: Map<String, Value>) -> Result<Self, CliError> {
        let mut merged = match serde_json::to_value(RunConfig::default()) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serializes to an object"),
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let Value::Object(obj) = value else {
                return Err(CliError::Config(format!("{}: config must be a flat JSON object", path.display())));
            };
            overlay(&mut merged, obj)?;
        }
        overlay(&mut merged, overrides)?;
        let cfg: RunConfig = serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)");
        }
        if self.repeats == 0 {
            return bad("repeats must be positive");
        }
        if !(0.0..=1.0).contains(&self.shortcut_ratio) || !(0.0..=1.0).contains(&self.val_fraction) {
            return bad("shortcut_ratio and val_fraction must lie in [0, 1]");
        }
        self.sampling()?;
        self.model_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.collect_config().search.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// The resolved configuration as it appears in report headers.
    pub fn header_json(&self) -> String {
        let Ok(Value::Object(mut m)) = serde_json::to_value(self) else { unreachable!("config serializes to an object") };
        for k in EXECUTION_KEYS {
            m.remove(k);
        }
        serde_json::to_string(&m).expect("serializable")
    }

    pub fn sampling(&self) -> Result<Sampling, CliError> {
        match self.sampling.as_str() {
            "greedy" => Ok(Sampling::Greedy),
            "top_k" | "topk" => Ok(Sampling::TopK(self.top_k.max(1))),
            other => Err(CliError::Config(format!("sampling must be `greedy` or `top_k`, got `{other}`"))),
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig { restarts: self.fit_restarts, max_iters: self.fit_max_iters, ..FitConfig::default() }
    }

    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            n_targets: self.n_targets,
            skeleton: SkeletonConfig {
                max_len: self.target_max_len,
                max_depth: Some(self.target_max_depth),
                max_vars: 2,
                weights: default_weights(2),
                ..SkeletonConfig::default()
            },
            search: SearchConfig {
                batch_size: self.search_batch,
                epochs: self.search_epochs,
                risk_eps: self.risk_eps,
                entropy_weight: self.entropy_weight,
                lr: self.search_lr,
                max_expr_len: self.search_max_expr_len,
                fit: self.fit_config(),
                ..SearchConfig::default()
            },
            n_points: self.n_points,
            seed: self.seed,
            workers: self.workers,
            ..CollectConfig::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_enc_blocks: self.n_enc_blocks,
            n_dec_layers: self.n_dec_layers,
            n_inducing: self.n_inducing,
            n_seed_vectors: self.n_seed_vectors,
            d_ff: self.d_ff,
            dropout: self.dropout,
            max_seq_len: self.model_max_seq_len,
            lr: self.lr,
            batch_size: self.batch_size,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.train_epochs, steps: self.train_steps, warmup: self.warmup, seed: self.seed, ..TrainConfig::default() }
    }

    pub fn inference_config(&self, seed: u64, wallclock: bool) -> Result<InferenceConfig, CliError> {
        Ok(InferenceConfig {
            max_seq_len: self.max_seq_len,
            max_expr_len: self.max_expr_len,
            sampling: self.sampling()?,
            temperature: self.temperature,
            seed,
            fit: self.fit_config(),
            wallclock,
        })
    }

    /// `start:stop:step` (inclusive) or a comma list.
    pub fn noise_levels(&self) -> Result<Vec<f64>, CliError> {
        parse_levels(&self.levels)
    }

    pub fn corpus_sizes(&self) -> Result<Vec<usize>, CliError> {
        self.sizes
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| CliError::Config(format!("bad corpus size `{s}`"))))
            .collect()
    }
}

fn overlay(into: &mut Map<String, Value>, from: Map<String, Value>) -> Result<(), CliError> {
    for (k, v) in from {
        if !into.contains_key(&k) {
            return Err(CliError::Config(format!("unknown config key `{k}`")));
        }
        into.insert(k, v);
    }
    Ok(())
}

pub fn parse_levels(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("bad level spec `{spec}`"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?;
        let (start, stop, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // Rounded to the step's precision so 0.07 prints as 0.07.
        return Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect());
    }
    spec.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect()
}

/// Interpret a `key=value` override; values parse as JSON, else as a string.
pub fn parse_set(item: &str) -> Result<(String, Value), CliError> {
    let (k, v) = item.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{item}`")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}
