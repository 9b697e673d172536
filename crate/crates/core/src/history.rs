//! Search histories: flattening, segmentation, shortcut extraction and the
//! JSONL corpus format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constopt::{finite_or_null, score_at, FitError};
use crate::datagen::{DataError, PointSet, SamplingSpec};
use crate::expr::{parse_preorder, validate_preorder, ExprError, Token};
use crate::reward::{quantize, RewardLevel, SOLVE_THRESHOLD};
use crate::seed::{derive_seed, rng_from};

/// Longest flattened history kept for training.
pub const MAX_HISTORY_TOKENS: usize = 1024;

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Json { line: usize, msg: String },
    #[error("record {id}: {msg}")]
    Invalid { id: String, msg: String },
    #[error("expression tokens after the last reward token")]
    UnterminatedSegment,
    #[error("reward token without a preceding expression")]
    EmptySegment,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub tokens: Vec<Token>,
    pub constants: Vec<f64>,
    #[serde(with = "finite_or_null")]
    pub r2: f64,
    pub level: RewardLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminatedBy {
    Solved,
    LengthCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHistory {
    pub entries: Vec<HistoryEntry>,
    pub terminated_by: TerminatedBy,
    pub epochs: usize,
}

impl SearchHistory {
    pub fn flatten(&self) -> Vec<Token> {
        flatten(&self.entries)
    }

    pub fn flattened_len(&self) -> usize {
        flattened_len(&self.entries)
    }

    pub fn levels(&self) -> Vec<RewardLevel> {
        self.entries.iter().map(|e| e.level).collect()
    }
}

/// Each entry's expression tokens followed by its reward token.
pub fn flatten(entries: &[HistoryEntry]) -> Vec<Token> {
    let mut out = Vec::with_capacity(flattened_len(entries));
    for e in entries {
        out.extend_from_slice(&e.tokens);
        out.push(Token::Reward(e.level));
    }
    out
}

pub fn flattened_len(entries: &[HistoryEntry]) -> usize {
    entries.iter().map(|e| e.tokens.len() + 1).sum()
}

/// Split a flattened history at its reward tokens.
pub fn segment(tokens: &[Token]) -> Result<Vec<(Vec<Token>, RewardLevel)>, HistoryError> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for &t in tokens {
        match t {
            Token::Reward(level) => {
                if cur.is_empty() {
                    return Err(HistoryError::EmptySegment);
                }
                out.push((std::mem::take(&mut cur), level));
            }
            t if t.is_expression() => cur.push(t),
            other => return Err(ExprError::InvalidTokenKind(other).into()),
        }
    }
    if !cur.is_empty() {
        return Err(HistoryError::UnterminatedSegment);
    }
    Ok(out)
}

/// Indices kept by the strict running-maximum filter.
pub fn shortcut_indices(levels: &[RewardLevel]) -> Vec<usize> {
    let mut kept = Vec::new();
    let mut best: Option<RewardLevel> = None;
    for (i, &l) in levels.iter().enumerate() {
        if best.map_or(true, |b| l > b) {
            kept.push(i);
            best = Some(l);
        }
    }
    kept
}

/// Drop every entry that does not strictly improve on all kept predecessors.
pub fn extract_shortcut(history: &SearchHistory) -> SearchHistory {
    let keep = shortcut_indices(&history.levels());
    SearchHistory {
        entries: keep.into_iter().map(|i| history.entries[i].clone()).collect(),
        terminated_by: history.terminated_by,
        epochs: history.epochs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Full,
    Shortcut,
}

/// One line of a history corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub id: String,
    pub points_csv: String,
    pub tokens: Vec<Token>,
    pub terminated_by: TerminatedBy,
    pub seed: u64,
    pub variant: Variant,
    pub spec: SamplingSpec,
    /// Fitted constants of each entry.
    pub constants: Vec<Vec<f64>>,
    /// Raw R² of each entry; `null` when no valid fit exists.
    pub r2: Vec<Option<f64>>,
    /// Preorder form of the generating expression, when synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<Token>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub target_constants: Vec<f64>,
    pub epochs: usize,
}

impl HistoryRecord {
    pub fn new(id: String, points: &PointSet, history: &SearchHistory, seed: u64) -> Self {
        Self {
            id,
            points_csv: points.to_csv(),
            tokens: history.flatten(),
            terminated_by: history.terminated_by,
            seed,
            variant: Variant::Full,
            spec: points.spec,
            constants: history.entries.iter().map(|e| e.constants.clone()).collect(),
            r2: history.entries.iter().map(|e| e.r2.is_finite().then_some(e.r2)).collect(),
            target: None,
            target_constants: Vec::new(),
            epochs: history.epochs,
        }
    }

    pub fn points(&self) -> Result<PointSet, HistoryError> {
        Ok(PointSet::from_csv(&self.points_csv, self.spec, 0.0)?)
    }

    pub fn history(&self) -> Result<SearchHistory, HistoryError> {
        let segs = segment(&self.tokens)?;
        if segs.len() != self.constants.len() || segs.len() != self.r2.len() {
            return Err(self.invalid(format!(
                "{} segments but {} constant lists and {} r2 values",
                segs.len(),
                self.constants.len(),
                self.r2.len()
            )));
        }
        let entries = segs
            .into_iter()
            .zip(&self.constants)
            .zip(&self.r2)
            .map(|(((tokens, level), c), r2)| HistoryEntry {
                tokens,
                constants: c.clone(),
                r2: r2.unwrap_or(f64::NEG_INFINITY),
                level,
            })
            .collect();
        Ok(SearchHistory { entries, terminated_by: self.terminated_by, epochs: self.epochs })
    }

    /// Same record with its history replaced by the shortcut.
    pub fn to_shortcut(&self) -> Result<Self, HistoryError> {
        let short = extract_shortcut(&self.history()?);
        Ok(Self {
            tokens: short.flatten(),
            constants: short.entries.iter().map(|e| e.constants.clone()).collect(),
            r2: short.entries.iter().map(|e| e.r2.is_finite().then_some(e.r2)).collect(),
            variant: Variant::Shortcut,
            ..self.clone()
        })
    }

    fn invalid(&self, msg: String) -> HistoryError {
        HistoryError::Invalid { id: self.id.clone(), msg }
    }

    /// Re-check a record from scratch: token structure, constraints, length
    /// cap, and every reward recomputed from the stored constants.
    pub fn validate(&self, max_tokens: usize) -> Result<(), HistoryError> {
        let history = self.history()?;
        if self.tokens.len() > max_tokens {
            return Err(self.invalid(format!("{} tokens exceed the cap of {max_tokens}", self.tokens.len())));
        }
        let points = self.points()?;
        for (i, e) in history.entries.iter().enumerate() {
            validate_preorder(&e.tokens)?;
            let tree = parse_preorder(&e.tokens)?;
            let r2 = if e.r2.is_finite() {
                score_at(&tree, points.x.view(), &points.y, &e.constants)?
            } else {
                f64::NEG_INFINITY
            };
            if quantize(r2) != e.level {
                return Err(self.invalid(format!("entry {i}: stored level {} but recomputed {}", e.level, quantize(r2))));
            }
            if e.r2.is_finite() && r2.to_bits() != e.r2.to_bits() {
                return Err(self.invalid(format!("entry {i}: stored r2 {} but recomputed {r2}", e.r2)));
            }
        }
        if self.terminated_by == TerminatedBy::Solved && !history.entries.last().is_some_and(|e| e.r2 > SOLVE_THRESHOLD) {
            return Err(self.invalid("marked Solved but the last entry is below the threshold".into()));
        }
        Ok(())
    }
}

/// Line-oriented JSONL sink.
pub struct CorpusWriter {
    out: BufWriter<File>,
    count: usize,
}

impl CorpusWriter {
    pub fn create(path: &Path) -> Result<Self, HistoryError> {
        Ok(Self { out: BufWriter::new(File::create(path)?), count: 0 })
    }

    pub fn write(&mut self, record: &HistoryRecord) -> Result<(), HistoryError> {
        let line = serde_json::to_string(record).map_err(|e| HistoryError::Json { line: self.count + 1, msg: e.to_string() })?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> Result<usize, HistoryError> {
        self.out.flush()?;
        Ok(self.count)
    }
}

pub fn write_corpus(path: &Path, records: &[HistoryRecord]) -> Result<(), HistoryError> {
    let mut w = CorpusWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<HistoryRecord>, HistoryError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HistoryError::Json { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

/// Replace each record by its shortcut with probability `ratio`, decided per
/// record id so the outcome does not depend on corpus order.
pub fn mix_variants(records: &[HistoryRecord], ratio: f64, seed: u64) -> Result<Vec<HistoryRecord>, HistoryError> {
    use rand::Rng;
    records
        .iter()
        .map(|r| {
            let u: f64 = rng_from(derive_seed(seed, &r.id, 0)).random();
            if u < ratio {
                r.to_shortcut()
            } else {
                Ok(r.clone())
            }
        })
        .collect()
}

/// Seeded disjoint split; the first `round(n · val_fraction)` shuffled records go to validation.
pub fn split_records(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(derive_seed(seed, "split", 0)));
    let n_val = ((n as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Split the corpus at `path` into `train_out` and `val_out`; returns the record counts.
pub fn split_corpus(
    path: &Path,
    val_fraction: f64,
    seed: u64,
    train_out: &Path,
    val_out: &Path,
) -> Result<(usize, usize), HistoryError> {
    let records = read_corpus(path)?;
    let (train, val) = split_records(records.len(), val_fraction, seed);
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    write_corpus(train_out, &pick(&train))?;
    write_corpus(val_out, &pick(&val))?;
    Ok((train.len(), val.len()))
}
