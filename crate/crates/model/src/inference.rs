//! In-context search: the model proposes expressions, each completed one is
//! fitted and scored, and its true quantized reward is fed back as the next
//! token.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use formula_distill_core::constopt::{finite_or_null, fit_constants, FitConfig, FitResult};
use formula_distill_core::datagen::PointSet;
use formula_distill_core::expr::{parse_preorder, GenState, Token};
use formula_distill_core::history::TerminatedBy;
use formula_distill_core::reward::{quantize, RewardLevel, SOLVE_THRESHOLD};
use formula_distill_core::seed::{derive_seed, rng_from};
use formula_distill_core::vocab::Vocab;

use crate::config::{ModelError, Result};
use crate::model::SeqModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Greedy,
    TopK(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Token budget of the whole sequence, excluding `<bos>`.
    pub max_seq_len: usize,
    /// Tokens allowed in one expression before it is abandoned.
    pub max_expr_len: usize,
    pub sampling: Sampling,
    pub temperature: f64,
    pub seed: u64,
    pub fit: FitConfig,
    /// Record elapsed seconds; when off every `t` is 0 and results are byte-stable.
    pub wallclock: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            max_seq_len: 2048,
            max_expr_len: 60,
            sampling: Sampling::Greedy,
            temperature: 1.0,
            seed: 0,
            fit: FitConfig::default(),
            wallclock: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub tokens: Vec<Token>,
    pub constants: Vec<f64>,
    #[serde(with = "finite_or_null")]
    pub r2: f64,
    pub level: RewardLevel,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub best_tokens: Vec<Token>,
    pub best_constants: Vec<f64>,
    #[serde(with = "finite_or_null")]
    pub best_r2: f64,
    pub trajectory: Vec<TrajectoryEntry>,
    pub n_intermediate: usize,
    pub terminated_by: TerminatedBy,
    /// Expressions abandoned at `max_expr_len`.
    pub aborted: usize,
    /// Everything generated after `<bos>`, reward tokens included.
    pub sequence: Vec<Token>,
}

impl InferenceResult {
    /// Running maximum of R² along the trajectory.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.trajectory
            .iter()
            .map(|e| {
                best = best.max(e.r2);
                best
            })
            .collect()
    }
}

/// Number of completed expressions the run evaluated.
pub fn count_intermediate(result: &InferenceResult) -> usize {
    result.trajectory.len()
}

fn pick<R: Rng>(logits: &[f32], allowed: &[u32], sampling: Sampling, temperature: f64, rng: &mut R) -> u32 {
    // First maximum wins ties.
    let greedy = || allowed.iter().copied().fold(None, |b: Option<u32>, id| match b {
        Some(bi) if logits[bi as usize] >= logits[id as usize] => Some(bi),
        _ => Some(id),
    });
    match sampling {
        Sampling::Greedy => greedy().expect("a legal token exists"),
        Sampling::TopK(k) => {
            let mut cand: Vec<u32> = allowed.to_vec();
            cand.sort_by(|&a, &b| logits[b as usize].total_cmp(&logits[a as usize]).then(a.cmp(&b)));
            cand.truncate(k.max(1));
            let t = temperature.max(1e-6);
            let top = logits[cand[0] as usize] as f64;
            let w: Vec<f64> = cand.iter().map(|&i| ((logits[i as usize] as f64 - top) / t).exp()).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (i, wi) in cand.iter().zip(&w) {
                if u < *wi {
                    return *i;
                }
                u -= wi;
            }
            *cand.last().expect("non-empty")
        }
    }
}

/// Run the reward-spliced generation loop on `points`.
pub fn generate(model: &SeqModel, points: &PointSet, cfg: &InferenceConfig) -> Result<InferenceResult> {
    if points.dims() > model.config.max_vars {
        return Err(ModelError::Dims { got: points.dims(), max: model.config.max_vars });
    }
    let vocab = Vocab::new();
    let cap = cfg.max_seq_len.min(model.config.max_seq_len - 1);
    let alphabet: Vec<(Token, u32)> =
        Token::expression_alphabet(points.dims() as u8).into_iter().map(|t| (t, vocab.id(t))).collect();
    let fit_cfg = FitConfig { seed: derive_seed(cfg.seed, "fit", 0), ..cfg.fit };
    let mut rng = rng_from(derive_seed(cfg.seed, "sample", 0));
    let started = Instant::now();
    let z = model.encode_points(points)?;
    let mut state = model.start(&z)?;
    let mut logits = model.step(&mut state, vocab.bos_id())?;
    let mut sequence: Vec<Token> = Vec::new();
    let mut trajectory: Vec<TrajectoryEntry> = Vec::new();
    let mut cache: HashMap<Vec<Token>, FitResult> = HashMap::new();
    let mut aborted = 0;
    let mut terminated_by = TerminatedBy::LengthCap;

    'outer: loop {
        let mut expr = GenState::new();
        while !expr.is_complete() {
            if sequence.len() + 1 > cap {
                break 'outer;
            }
            if expr.len() >= cfg.max_expr_len {
                aborted += 1;
                break;
            }
            let allowed: Vec<u32> = alphabet.iter().filter(|(t, _)| expr.allows(*t)).map(|&(_, id)| id).collect();
            let id = pick(&logits, &allowed, cfg.sampling, cfg.temperature, &mut rng);
            let tok = vocab.token(id).expect("id from the vocabulary");
            expr.push(tok).expect("masked token is legal");
            sequence.push(tok);
            logits = model.step(&mut state, id)?;
        }
        let entry = if expr.is_complete() {
            let tokens = expr.tokens().to_vec();
            let fit = match cache.get(&tokens) {
                Some(f) => f.clone(),
                None => {
                    let tree = parse_preorder(&tokens).expect("complete traversal parses");
                    let f = fit_constants(&tree, points.x.view(), &points.y, &fit_cfg)
                        .map_err(|e| ModelError::Config(format!("fit: {e}")))?;
                    cache.insert(tokens.clone(), f.clone());
                    f
                }
            };
            let t = if cfg.wallclock { started.elapsed().as_secs_f64() } else { 0.0 };
            Some(TrajectoryEntry { tokens, constants: fit.constants, r2: fit.r2, level: quantize(fit.r2), t })
        } else {
            None
        };
        let level = entry.as_ref().map_or(RewardLevel::ZERO, |e| e.level);
        let solved = entry.as_ref().is_some_and(|e| e.r2 > SOLVE_THRESHOLD);
        if let Some(e) = entry {
            trajectory.push(e);
        }
        if solved {
            terminated_by = TerminatedBy::Solved;
            sequence.push(Token::Reward(level));
            break;
        }
        if sequence.len() + 1 > cap {
            break;
        }
        sequence.push(Token::Reward(level));
        logits = model.step(&mut state, vocab.id(Token::Reward(level)))?;
    }

    let best = (0..trajectory.len()).fold(None, |b: Option<usize>, i| match b {
        Some(bi) if trajectory[bi].r2 >= trajectory[i].r2 => Some(bi),
        _ => Some(i),
    });
    let (best_tokens, best_constants, best_r2) = match best {
        Some(i) => (trajectory[i].tokens.clone(), trajectory[i].constants.clone(), trajectory[i].r2),
        None => (Vec::new(), Vec::new(), f64::NEG_INFINITY),
    };
    Ok(InferenceResult {
        best_tokens,
        best_constants,
        best_r2,
        n_intermediate: trajectory.len(),
        trajectory,
        terminated_by,
        aborted,
        sequence,
    })
}
