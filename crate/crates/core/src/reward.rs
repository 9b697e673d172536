//! Coefficient of determination and its two-decimal quantization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Raw R² above which a search counts as solved.
pub const SOLVE_THRESHOLD: f64 = 0.99;

/// Number of distinct reward levels, "0.00" through "1.00".
pub const N_LEVELS: usize = 101;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("length mismatch: {0} targets vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("target has zero variance")]
    DegenerateTarget,
    #[error("non-finite input")]
    NonFinite,
    #[error("reward level {0} outside 0..=100")]
    OutOfRange(u32),
    #[error("cannot parse reward token `{0}`")]
    Parse(String),
}

/// Quantized R², stored as hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RewardLevel(u8);

impl RewardLevel {
    pub const ZERO: RewardLevel = RewardLevel(0);
    pub const MAX: RewardLevel = RewardLevel(100);

    pub fn new(level: u32) -> Result<Self, RewardError> {
        if level > 100 {
            return Err(RewardError::OutOfRange(level));
        }
        Ok(Self(level as u8))
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn all() -> impl Iterator<Item = RewardLevel> {
        (0..=100u8).map(RewardLevel)
    }
}

impl fmt::Display for RewardLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl FromStr for RewardLevel {
    type Err = RewardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        let bad = || RewardError::Parse(s.to_string());
        if b.len() != 4 || b[1] != b'.' || !b[0].is_ascii_digit() || !b[2].is_ascii_digit() || !b[3].is_ascii_digit() {
            return Err(bad());
        }
        let level = (b[0] - b'0') as u32 * 100 + (b[2] - b'0') as u32 * 10 + (b[3] - b'0') as u32;
        RewardLevel::new(level).map_err(|_| bad())
    }
}

impl Serialize for RewardLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RewardLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `1 - SS_res / SS_tot`.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64, RewardError> {
    if y.len() != y_hat.len() {
        return Err(RewardError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.len() < 2 {
        return Err(RewardError::TooFewPoints(y.len()));
    }
    if y.iter().chain(y_hat).any(|v| !v.is_finite()) {
        return Err(RewardError::NonFinite);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(RewardError::DegenerateTarget);
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    // Overflowing residuals still yield a finite (very negative) score.
    Ok(if r2.is_finite() { r2 } else { f64::MIN })
}

/// Round half away from zero to two decimals and clamp into [0, 1].
///
/// Non-finite input stands for a failed evaluation and maps to level 0. Ties
/// are detected with a small tolerance so that decimal inputs such as 0.995,
/// whose binary value sits just below the tie, still round up.
pub fn quantize(r2: f64) -> RewardLevel {
    if !r2.is_finite() || r2 <= 0.0 {
        return RewardLevel::ZERO;
    }
    if r2 >= 1.0 {
        return RewardLevel::MAX;
    }
    let scaled = r2 * 100.0;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let level = if frac >= 0.5 - 1e-9 { floor + 1.0 } else { floor };
    RewardLevel(level.clamp(0.0, 100.0) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_examples() {
        let y = [0.0, 1.0, 2.0];
        assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
        assert_eq!(r_squared(&y, &[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&y, &[2.0, 1.0, 0.0]).unwrap(), -3.0);
        assert_eq!(r_squared(&[1.0, 1.0], &[1.0, 2.0]), Err(RewardError::DegenerateTarget));
        assert_eq!(r_squared(&[1.0], &[1.0]), Err(RewardError::TooFewPoints(1)));
        assert_eq!(r_squared(&[1.0, 2.0], &[1.0]), Err(RewardError::LengthMismatch(2, 1)));
        assert!(r_squared(&[0.0, 1.0], &[1e300, -1e300]).unwrap().is_finite());
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.634).to_string(), "0.63");
        assert_eq!(quantize(-0.2).to_string(), "0.00");
        assert_eq!(quantize(0.995).to_string(), "1.00");
        assert_eq!(quantize(0.125).to_string(), "0.13");
        assert_eq!(quantize(1.7).to_string(), "1.00");
        assert_eq!(quantize(f64::NEG_INFINITY), RewardLevel::ZERO);
        assert_eq!(quantize(f64::NAN), RewardLevel::ZERO);
    }

    #[test]
    fn level_spelling() {
        assert_eq!(RewardLevel::new(5).unwrap().to_string(), "0.05");
        assert_eq!(RewardLevel::MAX.to_string(), "1.00");
        assert_eq!("0.84".parse::<RewardLevel>().unwrap().level(), 84);
        for bad in ["1.01", "0.5", "2.00", "a.bc", "0,50", "00.5"] {
            assert!(bad.parse::<RewardLevel>().is_err(), "{bad}");
        }
        assert!(RewardLevel::new(101).is_err());
    }
}
