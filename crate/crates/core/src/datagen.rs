//! Point sampling, target synthesis and noise injection.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid sampling spec: {0}")]
    Spec(String),
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("non-finite value in generated data for `{0}`")]
    NonFinite(String),
    #[error("malformed data file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingKind {
    /// `U(a,b,c)`: c i.i.d. uniform draws per variable.
    Uniform,
    /// `E(a,b,c)`: c evenly spaced values per variable.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub kind: SamplingKind,
    pub a: f64,
    pub b: f64,
    pub c: usize,
    pub dims: usize,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn uniform(a: f64, b: f64, c: usize, dims: usize, seed: u64) -> Self {
        Self { kind: SamplingKind::Uniform, a, b, c, dims, seed }
    }

    pub fn grid(a: f64, b: f64, c: usize, dims: usize) -> Self {
        Self { kind: SamplingKind::Grid, a, b, c, dims, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_interval(mut self, a: f64, b: f64) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.a.is_finite() && self.b.is_finite() && self.a < self.b) {
            return Err(DataError::Spec(format!("need a < b, got a={} b={}", self.a, self.b)));
        }
        if self.c == 0 {
            return Err(DataError::Spec("need c >= 1".into()));
        }
        if self.dims == 0 {
            return Err(DataError::Spec("need at least one variable".into()));
        }
        Ok(())
    }
}

fn linspace(a: f64, b: f64, c: usize) -> Vec<f64> {
    if c == 1 {
        return vec![a];
    }
    (0..c).map(|i| a + (b - a) * i as f64 / (c - 1) as f64).collect()
}

/// Sample the input matrix (rows are points).
///
/// Multi-variable grids are laid out along the diagonal: row `i` holds the
/// `i`-th grid value for every variable, giving `c` rows in total.
pub fn sample_points(spec: &SamplingSpec) -> Result<Array2<f64>, DataError> {
    spec.validate()?;
    Ok(match spec.kind {
        SamplingKind::Uniform => {
            let mut rng = rng_from(spec.seed);
            let mut x = Array2::zeros((spec.c, spec.dims));
            for v in x.iter_mut() {
                *v = rng.random_range(spec.a..spec.b);
            }
            x
        }
        SamplingKind::Grid => {
            let g = linspace(spec.a, spec.b, spec.c);
            Array2::from_shape_fn((spec.c, spec.dims), |(i, _)| g[i])
        }
    })
}

/// Full Cartesian product of the per-variable grids (1 or 2 variables).
pub fn sample_points_cartesian(spec: &SamplingSpec) -> Result<Array2<f64>, DataError> {
    spec.validate()?;
    if spec.kind != SamplingKind::Grid {
        return sample_points(spec);
    }
    let g = linspace(spec.a, spec.b, spec.c);
    match spec.dims {
        1 => Ok(Array2::from_shape_fn((spec.c, 1), |(i, _)| g[i])),
        2 => Ok(Array2::from_shape_fn((spec.c * spec.c, 2), |(r, j)| {
            if j == 0 {
                g[r / spec.c]
            } else {
                g[r % spec.c]
            }
        })),
        d => Err(DataError::Spec(format!("cartesian grids support 1 or 2 variables, got {d}"))),
    }
}

/// Observations plus the recipe that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub spec: SamplingSpec,
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSetMeta {
    pub spec: SamplingSpec,
    pub seed: u64,
    pub noise_level: f64,
}

impl PointSet {
    pub fn new(x: Array2<f64>, y: Vec<f64>, spec: SamplingSpec, noise_level: f64) -> Result<Self, DataError> {
        if x.nrows() != y.len() {
            return Err(DataError::Format(format!("{} rows but {} targets", x.nrows(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("point set".into()));
        }
        Ok(Self { x, y, spec, noise_level })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }

    /// `x1,...,xd,y` with a header row; floats use the shortest exact spelling.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for j in 0..self.dims() {
            let _ = write!(s, "x{},", j + 1);
        }
        s.push_str("y\n");
        for (i, row) in self.x.rows().into_iter().enumerate() {
            for v in row {
                let _ = write!(s, "{v:?},");
            }
            let _ = writeln!(s, "{:?}", self.y[i]);
        }
        s
    }

    /// Parse the CSV written by [`PointSet::to_csv`].
    pub fn from_csv(text: &str, spec: SamplingSpec, noise_level: f64) -> Result<Self, DataError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| DataError::Format("empty csv".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.last() != Some(&"y") || cols.len() < 2 {
            return Err(DataError::Format(format!("bad header `{header}`")));
        }
        for (j, c) in cols[..cols.len() - 1].iter().enumerate() {
            if *c != format!("x{}", j + 1) {
                return Err(DataError::Format(format!("bad header `{header}`")));
            }
        }
        let dims = cols.len() - 1;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for line in lines {
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| DataError::Format(format!("bad number in `{line}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if vals.len() != dims + 1 {
                return Err(DataError::Format(format!("expected {} columns in `{line}`", dims + 1)));
            }
            xs.extend_from_slice(&vals[..dims]);
            ys.push(vals[dims]);
        }
        let x = Array2::from_shape_vec((ys.len(), dims), xs).map_err(|e| DataError::Format(e.to_string()))?;
        PointSet::new(x, ys, spec, noise_level)
    }

    pub fn meta(&self) -> PointSetMeta {
        PointSetMeta { spec: self.spec, seed: self.spec.seed, noise_level: self.noise_level }
    }

    /// Write `path` (CSV) and `path.json` (metadata sidecar).
    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_csv())?;
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta())? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path)?;
        let side = sidecar_path(path);
        let meta: PointSetMeta = if side.exists() {
            serde_json::from_str(&fs::read_to_string(side)?)?
        } else {
            let probe = PointSet::from_csv(&text, SamplingSpec::grid(0.0, 1.0, 1, 1), 0.0)?;
            let spec = SamplingSpec::uniform(0.0, 1.0, probe.len().max(1), probe.dims(), 0);
            PointSetMeta { spec, seed: 0, noise_level: 0.0 }
        };
        PointSet::from_csv(&text, meta.spec, meta.noise_level)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// The eleven noise levels 0.00, 0.01, ..., 0.10.
pub fn noise_levels() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 100.0).collect()
}

/// `y + L·(max(y) − min(y))·D` with `D` standard normal draws divided by
/// their largest magnitude, so `|D| ≤ 1`.
pub fn add_noise<R: Rng + ?Sized>(y: &[f64], level: f64, rng: &mut R, strict: bool) -> Result<Vec<f64>, DataError> {
    if y.is_empty() {
        return Err(DataError::Spec("cannot add noise to an empty target".into()));
    }
    if !level.is_finite() || level < 0.0 {
        return Err(DataError::Spec(format!("noise level {level} must be non-negative")));
    }
    if strict && !noise_levels().iter().any(|l| (l - level).abs() < 1e-12) {
        return Err(DataError::Spec(format!("noise level {level} is not on the 0.00:0.10:0.01 grid")));
    }
    if level == 0.0 {
        return Ok(y.to_vec());
    }
    let draws: Vec<f64> = (0..y.len()).map(|_| rng.sample(StandardNormal)).collect();
    let peak = draws.iter().fold(0.0f64, |m, d: &f64| m.max(d.abs()));
    let d: Vec<f64> = if peak > 0.0 { draws.iter().map(|v| v / peak).collect() } else { draws };
    Ok(apply_noise(y, level, &d))
}

/// The noise formula with caller-provided normalized draws.
pub fn apply_noise(y: &[f64], level: f64, d: &[f64]) -> Vec<f64> {
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).abs();
    y.iter().zip(d).map(|(v, n)| v + level * span * n).collect()
}

/// The ten symmetric test intervals [−2,2], [−4,4], …, [−20,20].
pub fn versatility_intervals() -> Vec<(f64, f64)> {
    (1..=10).map(|k| (-2.0 * k as f64, 2.0 * k as f64)).collect()
}

/// Default sampling interval for collected training targets.
pub const TRAIN_INTERVAL: (f64, f64) = (-10.0, 10.0);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_uniform() {
        let x = sample_points(&SamplingSpec::grid(0.0, 1.0, 3, 1)).unwrap();
        assert_eq!(x.column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        let spec = SamplingSpec::uniform(-1.0, 1.0, 20, 2, 42);
        let a = sample_points(&spec).unwrap();
        let b = sample_points(&spec).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (-1.0..1.0).contains(v)));
        assert_ne!(a, sample_points(&spec.with_seed(43)).unwrap());
        let g2 = sample_points(&SamplingSpec::grid(-1.0, 1.0, 5, 2)).unwrap();
        assert_eq!(g2.nrows(), 5);
        assert_eq!(g2.column(0), g2.column(1));
        let cart = sample_points_cartesian(&SamplingSpec::grid(-1.0, 1.0, 5, 2)).unwrap();
        assert_eq!(cart.nrows(), 25);
    }

    #[test]
    fn spec_errors() {
        assert!(sample_points(&SamplingSpec::uniform(1.0, 1.0, 3, 1, 0)).is_err());
        assert!(sample_points(&SamplingSpec::uniform(0.0, 1.0, 0, 1, 0)).is_err());
        assert!(sample_points_cartesian(&SamplingSpec::grid(0.0, 1.0, 3, 3)).is_err());
    }

    #[test]
    fn noise_examples() {
        let mut rng = rng_from(1);
        let y = vec![0.3, -2.0, 5.5];
        let same = add_noise(&y, 0.0, &mut rng, true).unwrap();
        assert_eq!(same.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), y.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(apply_noise(&[0.0, 1.0], 0.1, &[1.0, -1.0]), vec![0.1, 0.9]);
        assert_eq!(noise_levels().len(), 11);
        assert!(add_noise(&y, 0.015, &mut rng, true).is_err());
        assert!(add_noise(&y, 0.015, &mut rng, false).is_ok());
        assert!(add_noise(&[], 0.01, &mut rng, false).is_err());
    }

    #[test]
    fn intervals() {
        let iv = versatility_intervals();
        assert_eq!(iv.len(), 10);
        assert_eq!(iv[0], (-2.0, 2.0));
        assert_eq!(iv[9], (-20.0, 20.0));
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let spec = SamplingSpec::uniform(-10.0, 10.0, 17, 2, 9);
        let x = sample_points(&spec).unwrap();
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0].sin() * r[1] / 3.0).collect();
        let ps = PointSet::new(x, y, spec, 0.0).unwrap();
        let back = PointSet::from_csv(&ps.to_csv(), spec, 0.0).unwrap();
        assert_eq!(back, ps);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        ps.write(&p).unwrap();
        assert_eq!(PointSet::read(&p).unwrap(), ps);
        assert!(sidecar_path(&p).exists());
    }

    #[test]
    fn rejects_non_finite() {
        let x = Array2::from_elem((2, 1), 1.0);
        assert!(PointSet::new(x, vec![1.0, f64::NAN], SamplingSpec::grid(0.0, 1.0, 2, 1), 0.0).is_err());
    }
}
