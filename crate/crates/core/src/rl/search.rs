//! Risk-seeking policy-gradient search over expression skeletons.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constopt::{fit_constants, FitConfig, FitError, FitResult};
use crate::datagen::PointSet;
use crate::expr::{parse_preorder, GrowthLimits, Token};
use crate::history::{flattened_len, HistoryEntry, SearchHistory, TerminatedBy, MAX_HISTORY_TOKENS};
use crate::reward::{quantize, SOLVE_THRESHOLD};
use crate::rl::policy::{Episode, Policy};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Fraction of the batch above the risk quantile.
    pub risk_eps: f64,
    pub entropy_weight: f64,
    pub lr: f64,
    pub hidden: usize,
    pub embedding: usize,
    pub max_expr_len: usize,
    pub max_depth: Option<usize>,
    pub max_vars: u8,
    /// Enabled token spellings; empty means the whole alphabet.
    pub tokens: Vec<String>,
    pub fit: FitConfig,
    pub max_history_tokens: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 400,
            risk_eps: 0.05,
            entropy_weight: 0.03,
            lr: 0.005,
            hidden: 32,
            embedding: 8,
            max_expr_len: 30,
            max_depth: None,
            max_vars: 2,
            tokens: Vec::new(),
            fit: FitConfig::default(),
            max_history_tokens: MAX_HISTORY_TOKENS,
            seed: 0,
        }
    }
}

impl SearchConfig {
    /// Enabled actions for data with `dims` input columns.
    pub fn actions(&self, dims: usize) -> Result<Vec<Token>, SearchError> {
        let vars = (dims.min(self.max_vars as usize)) as u8;
        let alphabet = Token::expression_alphabet(vars);
        let mut out = Vec::new();
        if self.tokens.is_empty() {
            out = alphabet;
        } else {
            for s in &self.tokens {
                let t: Token = s.parse().map_err(|e| SearchError::Config(format!("{e}")))?;
                if !t.is_expression() {
                    return Err(SearchError::Config(format!("`{s}` is not an expression token")));
                }
                if alphabet.contains(&t) && !out.contains(&t) {
                    out.push(t);
                }
            }
            out.sort();
        }
        if !out.iter().any(|t| t.is_terminal()) {
            return Err(SearchError::Config("no terminal token enabled".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.risk_eps > 0.0 && self.risk_eps <= 1.0) {
            return bad("risk_eps must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return bad("entropy_weight must be non-negative");
        }
        if self.max_expr_len == 0 || self.hidden == 0 || self.embedding == 0 {
            return bad("max_expr_len, hidden and embedding must be positive");
        }
        if self.max_history_tokens < 2 {
            return bad("max_history_tokens must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscardReason {
    /// Appending the next entry would exceed the token cap.
    LengthCap,
    /// The epoch budget ran out without a solve.
    EpochLimit,
}

/// Per-epoch diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub batch_r2: Vec<f64>,
    pub appended_r2: f64,
    pub quantile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchOutcome {
    Retained(SearchHistory),
    Discarded { history: SearchHistory, reason: DiscardReason },
}

impl SearchOutcome {
    pub fn history(&self) -> &SearchHistory {
        match self {
            SearchOutcome::Retained(h) => h,
            SearchOutcome::Discarded { history, .. } => history,
        }
    }

    pub fn retained(&self) -> Option<&SearchHistory> {
        match self {
            SearchOutcome::Retained(h) => Some(h),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRun {
    pub outcome: SearchOutcome,
    pub trace: Vec<EpochTrace>,
}

/// Empirical quantile with the upper neighbour of the rank.
pub fn risk_quantile(rewards: &[f64], eps: f64) -> f64 {
    let mut sorted = rewards.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let idx = ((1.0 - eps) * (sorted.len() - 1) as f64).ceil() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Run one search on `data` and report the history with its fate.
pub fn run_search(data: &PointSet, cfg: &SearchConfig) -> Result<SearchRun, SearchError> {
    cfg.validate()?;
    let actions = cfg.actions(data.dims())?;
    let mut rng = rng_from(derive_seed(cfg.seed, "search", 0));
    let mut policy = Policy::new(actions, cfg.embedding, cfg.hidden, &mut rng_from(derive_seed(cfg.seed, "policy", 0)));
    let limits = GrowthLimits { max_len: cfg.max_expr_len, max_depth: cfg.max_depth };
    let fit_cfg = FitConfig { seed: derive_seed(cfg.seed, "fit", 0), ..cfg.fit };
    let mut cache: HashMap<Vec<Token>, FitResult> = HashMap::new();
    let mut entries: Vec<HistoryEntry> = Vec::new();
    let mut trace = Vec::new();

    for epoch in 1..=cfg.epochs {
        let batch: Vec<Episode> = (0..cfg.batch_size).map(|_| policy.sample(&mut rng, limits)).collect();
        let mut fits = Vec::with_capacity(batch.len());
        for ep in &batch {
            let fit = match cache.get(&ep.tokens) {
                Some(f) => f.clone(),
                None => {
                    let tree = parse_preorder(&ep.tokens).expect("sampled traversals are complete");
                    let f = fit_constants(&tree, data.x.view(), &data.y, &fit_cfg)?;
                    cache.insert(ep.tokens.clone(), f.clone());
                    f
                }
            };
            fits.push(fit);
        }
        let raw: Vec<f64> = fits.iter().map(|f| f.r2).collect();
        // First index wins ties so the choice is order-stable.
        let best = (0..raw.len()).fold(0, |b, i| if raw[i] > raw[b] { i } else { b });
        let entry = HistoryEntry {
            tokens: batch[best].tokens.clone(),
            constants: fits[best].constants.clone(),
            r2: raw[best],
            level: quantize(raw[best]),
        };
        let rewards: Vec<f64> = raw.iter().map(|&r| if r.is_finite() { r.clamp(0.0, 1.0) } else { 0.0 }).collect();
        let quantile = risk_quantile(&rewards, cfg.risk_eps);
        trace.push(EpochTrace { batch_r2: raw.clone(), appended_r2: raw[best], quantile });

        if flattened_len(&entries) + entry.tokens.len() + 1 > cfg.max_history_tokens {
            let history = SearchHistory { entries, terminated_by: TerminatedBy::LengthCap, epochs: epoch };
            return Ok(SearchRun { outcome: SearchOutcome::Discarded { history, reason: DiscardReason::LengthCap }, trace });
        }
        let solved = entry.r2 > SOLVE_THRESHOLD;
        entries.push(entry);
        if solved {
            let history = SearchHistory { entries, terminated_by: TerminatedBy::Solved, epochs: epoch };
            return Ok(SearchRun { outcome: SearchOutcome::Retained(history), trace });
        }

        let elite: Vec<usize> = (0..batch.len()).filter(|&i| rewards[i] >= quantile).collect();
        let eps: Vec<&Episode> = elite.iter().map(|&i| &batch[i]).collect();
        let weights: Vec<f64> = elite.iter().map(|&i| rewards[i] - quantile).collect();
        let grad = policy.gradient(&eps, &weights, cfg.entropy_weight);
        policy.ascend(&grad, cfg.lr);
    }
    let history = SearchHistory { entries, terminated_by: TerminatedBy::LengthCap, epochs: cfg.epochs };
    Ok(SearchRun { outcome: SearchOutcome::Discarded { history, reason: DiscardReason::EpochLimit }, trace })
}
