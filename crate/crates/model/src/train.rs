//! Next-token training on history corpora.

use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use formula_distill_core::datagen::PointSet;
use formula_distill_core::history::HistoryRecord;
use formula_distill_core::seed::{derive_seed, rng_from};
use formula_distill_core::vocab::Vocab;

use crate::config::{ModelConfig, ModelError, Result};
use crate::model::{Batch, SeqModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Optimizer steps; 0 means `epochs` passes over the data.
    pub steps: usize,
    pub epochs: usize,
    pub warmup: usize,
    /// Final learning rate as a fraction of the peak (cosine decay).
    pub min_lr_ratio: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Upper bound on batch_size × padded length.
    pub max_batch_tokens: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 0,
            epochs: 10,
            warmup: 100,
            min_lr_ratio: 0.1,
            weight_decay: 0.0,
            clip_norm: 1.0,
            max_batch_tokens: 8192,
            seed: 0,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub records: usize,
    /// Records dropped because they exceed the model's sequence length.
    pub skipped_long: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// (step, loss) samples every `log_every` steps and at the end.
    pub curve: Vec<(usize, f64)>,
}

/// One training sequence.
#[derive(Debug, Clone)]
pub struct Example {
    pub points: PointSet,
    pub ids: Vec<u32>,
}

/// Convert records to examples, dropping those longer than `max_len` tokens.
pub fn examples_from_records(records: &[HistoryRecord], max_len: usize) -> Result<(Vec<Example>, usize)> {
    let vocab = Vocab::new();
    let mut out = Vec::new();
    let mut skipped = 0;
    for r in records {
        if r.tokens.len() > max_len || r.tokens.is_empty() {
            skipped += 1;
            continue;
        }
        let points = r.points().map_err(|e| ModelError::Corpus(format!("{}: {e}", r.id)))?;
        out.push(Example { points, ids: vocab.encode(&r.tokens) });
    }
    Ok((out, skipped))
}

/// Batches for one pass: shuffled, length-sorted within windows, same point count per batch.
pub fn plan_batches(examples: &[Example], batch_size: usize, max_batch_tokens: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = rng_from(derive_seed(seed, "epoch", epoch as u64));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let mut by_points: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in order {
        by_points.entry(examples[i].points.len()).or_default().push(i);
    }
    let mut batches = Vec::new();
    for (_, idx) in by_points {
        for window in idx.chunks(batch_size * 16) {
            let mut w = window.to_vec();
            w.sort_by_key(|&i| examples[i].ids.len());
            let mut cur: Vec<usize> = Vec::new();
            for i in w {
                let longest = cur.iter().map(|&j| examples[j].ids.len()).max().unwrap_or(0).max(examples[i].ids.len());
                if !cur.is_empty() && (cur.len() >= batch_size || longest * (cur.len() + 1) > max_batch_tokens) {
                    batches.push(std::mem::take(&mut cur));
                }
                cur.push(i);
            }
            if !cur.is_empty() {
                batches.push(cur);
            }
        }
    }
    batches.shuffle(&mut rng);
    batches
}

pub fn make_batch(model: &SeqModel, examples: &[Example], idx: &[usize]) -> Result<Batch> {
    let vocab = Vocab::new();
    let points: Vec<&PointSet> = idx.iter().map(|&i| &examples[i].points).collect();
    let seqs: Vec<Vec<u32>> = idx.iter().map(|&i| examples[i].ids.clone()).collect();
    Batch::new(model, &points, &seqs, vocab.pad_id(), vocab.bos_id())
}

fn lr_at(step: usize, total: usize, cfg: &TrainConfig, peak: f64) -> f64 {
    if step < cfg.warmup {
        return peak * (step + 1) as f64 / cfg.warmup as f64;
    }
    let span = total.saturating_sub(cfg.warmup).max(1);
    let progress = ((step - cfg.warmup) as f64 / span as f64).min(1.0);
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    peak * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cos)
}

/// Train `model` in place on `examples`.
pub fn train_model(model: &mut SeqModel, examples: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(ModelError::Corpus("no trainable records".into()));
    }
    let batch_size = model.config.batch_size;
    let per_epoch = plan_batches(examples, batch_size, cfg.max_batch_tokens, cfg.seed, 0).len();
    let total = if cfg.steps > 0 { cfg.steps } else { cfg.epochs.max(1) * per_epoch };
    let mut opt = AdamW::new(
        model.params.all_vars(),
        ParamsAdamW { lr: model.config.lr, weight_decay: cfg.weight_decay, ..Default::default() },
    )?;
    let mut drop_rng = rng_from(derive_seed(cfg.seed, "dropout", 0));
    let mut curve = Vec::new();
    let mut initial = f64::NAN;
    let mut last = f64::NAN;
    let mut step = 0;
    let mut epoch = 0;
    let started = Instant::now();
    'outer: loop {
        for idx in plan_batches(examples, batch_size, cfg.max_batch_tokens, cfg.seed, epoch) {
            if step >= total {
                break 'outer;
            }
            let batch = make_batch(model, examples, &idx)?;
            let loss = model.loss(&batch, Some(&mut drop_rng))?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(ModelError::NonFiniteLoss(step));
            }
            if step == 0 {
                initial = value;
            }
            last = value;
            let mut grads = loss.backward()?;
            if cfg.clip_norm > 0.0 {
                clip_gradients(model, &mut grads, cfg.clip_norm)?;
            }
            opt.set_learning_rate(lr_at(step, total, cfg, model.config.lr));
            opt.step(&grads)?;
            if cfg.log_every > 0 && step % cfg.log_every == 0 {
                curve.push((step, value));
                log::info!("step {step}/{total} loss {value:.4} ({:.0}s)", started.elapsed().as_secs_f64());
            }
            step += 1;
        }
        epoch += 1;
    }
    if curve.last().map(|c| c.0) != Some(step.saturating_sub(1)) {
        curve.push((step.saturating_sub(1), last));
    }
    Ok(TrainReport { steps: step, records: examples.len(), skipped_long: 0, initial_loss: initial, final_loss: last, curve })
}

fn clip_gradients(model: &SeqModel, grads: &mut candle_core::backprop::GradStore, max_norm: f64) -> Result<()> {
    let mut sq = 0.0;
    for (_, v) in model.params.named() {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, v) in model.params.named() {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(())
}

/// Build a fresh model and train it on a corpus.
pub fn train(records: &[HistoryRecord], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(SeqModel, TrainReport)> {
    let mut model = SeqModel::new(model_cfg.clone(), cfg.seed, DType::F32)?;
    let (examples, skipped) = examples_from_records(records, model_cfg.max_seq_len)?;
    let mut report = train_model(&mut model, &examples, cfg)?;
    report.skipped_long = skipped;
    Ok((model, report))
}
