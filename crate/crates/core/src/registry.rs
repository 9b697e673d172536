//! Benchmark-expression registry backed by a CSV data file.
//!
//! The built-in table is compiled into the crate; setting
//! `FORMULA_DISTILL_DATA_DIR` points the loader at a directory holding
//! `benchmarks.csv` (and optionally `feynman.csv`) instead.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::Deserialize;

use crate::datagen::{sample_points, sample_points_cartesian, DataError, PointSet, SamplingKind, SamplingSpec};
use crate::expr::{ExprTree, Token};
use crate::formula::Formula;

pub const DATA_DIR_ENV: &str = "FORMULA_DISTILL_DATA_DIR";

const BUILTIN_BENCHMARKS: &str = include_str!("../data/benchmarks.csv");
const BUILTIN_FEYNMAN: &str = include_str!("../data/feynman.csv");

#[derive(Debug, Deserialize)]
struct Row {
    name: String,
    expression: String,
    kind: String,
    a: f64,
    b: f64,
    c: usize,
    dims: usize,
    #[serde(default)]
    suspect: u8,
}

#[derive(Debug, Clone)]
pub struct BenchmarkEntry {
    pub name: String,
    /// Infix text as stored in the table.
    pub expression: String,
    pub formula: Formula,
    pub spec: SamplingSpec,
    /// Transcribed as printed although the row looks wrong.
    pub suspect: bool,
    /// Preorder form and literal constants, when the vocabulary can express it.
    pub preorder: Option<(Vec<Token>, Vec<f64>)>,
}

impl BenchmarkEntry {
    pub fn group(&self) -> String {
        group_of(&self.name)
    }

    pub fn dims(&self) -> usize {
        self.spec.dims
    }

    pub fn tree(&self) -> Option<(ExprTree, Vec<f64>)> {
        self.formula.to_tree()
    }

    /// Closure evaluation of every row of `x`.
    pub fn eval(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.rows().into_iter().map(|r| self.formula.eval(r.as_slice().unwrap_or(&r.to_vec()))).collect()
    }

    /// Draw the entry's data set, optionally on another interval, seed or noise-free.
    pub fn sample(&self, spec: &SamplingSpec, cartesian: bool) -> Result<PointSet, DataError> {
        let x: Array2<f64> = if cartesian { sample_points_cartesian(spec)? } else { sample_points(spec)? };
        let y = self.eval(x.view());
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite(self.name.clone()));
        }
        PointSet::new(x, y, *spec, 0.0)
    }

    pub fn sample_default(&self, seed: u64) -> Result<PointSet, DataError> {
        self.sample(&self.spec.with_seed(seed), false)
    }
}

/// Benchmark family derived from the entry name.
pub fn group_of(name: &str) -> String {
    let lower = name.to_ascii_lowercase();
    for g in ["nguyen", "korns", "jin", "neat", "keijzer", "livermore", "vladislavleva", "constant"] {
        if lower.starts_with(&format!("{g}-")) {
            return g.to_string();
        }
    }
    if lower.len() > 1 && lower.starts_with('r') && lower[1..].chars().all(|c| c.is_ascii_digit()) {
        return "r".to_string();
    }
    "others".to_string()
}

#[derive(Debug, Clone)]
pub struct Registry {
    entries: Vec<BenchmarkEntry>,
}

impl Registry {
    pub fn builtin() -> Self {
        Self::from_csv(BUILTIN_BENCHMARKS).expect("built-in registry parses")
    }

    /// Built-in table unless the data-dir environment variable names a directory.
    pub fn from_env() -> Result<Self, DataError> {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) => Self::load(Path::new(&dir)),
            None => Ok(Self::builtin()),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(dir.join("benchmarks.csv"))?;
        Self::from_csv(&text)
    }

    pub fn from_csv(text: &str) -> Result<Self, DataError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| DataError::Format(e.to_string()))?;
            let kind = match row.kind.as_str() {
                "U" => SamplingKind::Uniform,
                "E" => SamplingKind::Grid,
                other => return Err(DataError::Format(format!("{}: unknown sampling kind `{other}`", row.name))),
            };
            let formula = Formula::parse(&row.expression).map_err(|e| DataError::Format(e.to_string()))?;
            if formula.max_var() as usize > row.dims {
                return Err(DataError::Format(format!("{}: uses x{} but dims={}", row.name, formula.max_var(), row.dims)));
            }
            let spec = SamplingSpec { kind, a: row.a, b: row.b, c: row.c, dims: row.dims, seed: 0 };
            let preorder = formula.to_tree().map(|(t, c)| (t.to_preorder(), c));
            entries.push(BenchmarkEntry {
                name: row.name,
                expression: row.expression,
                formula,
                spec,
                suspect: row.suspect != 0,
                preorder,
            });
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[BenchmarkEntry] {
        &self.entries
    }

    pub fn lookup(&self, name: &str) -> Result<&BenchmarkEntry, DataError> {
        self.entries.iter().find(|e| e.name == name).ok_or_else(|| DataError::UnknownBenchmark(name.to_string()))
    }

    /// Entries of a family (case-insensitive), or a comma-separated list of names.
    pub fn select(&self, group: &str) -> Result<Vec<&BenchmarkEntry>, DataError> {
        let g = group.to_ascii_lowercase();
        if g == "all" {
            return Ok(self.entries.iter().collect());
        }
        let by_group: Vec<_> = self.entries.iter().filter(|e| e.group() == g).collect();
        if !by_group.is_empty() {
            return Ok(by_group);
        }
        group.split(',').map(|n| self.lookup(n.trim())).collect()
    }
}

/// One row of the Feynman equation table, loaded as data only.
#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct FeynmanEntry {
    pub name: String,
    pub equation: String,
    pub reported_r2: f64,
}

pub fn load_feynman() -> Result<Vec<FeynmanEntry>, DataError> {
    let text = match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if Path::new(&dir).join("feynman.csv").exists() => {
            std::fs::read_to_string(Path::new(&dir).join("feynman.csv"))?
        }
        _ => BUILTIN_FEYNMAN.to_string(),
    };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader.deserialize().map(|r| r.map_err(|e| DataError::Format(e.to_string()))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::render_tokens;

    #[test]
    fn lookup_examples() {
        let reg = Registry::builtin();
        let n5 = reg.lookup("Nguyen-5").unwrap();
        assert_eq!(n5.expression, "sin(x1^2)*cos(x1)-1");
        assert_eq!((n5.spec.kind, n5.spec.a, n5.spec.b, n5.spec.c), (SamplingKind::Uniform, -1.0, 1.0, 20));
        let k14 = reg.lookup("Keijzer-14").unwrap();
        assert_eq!(k14.expression, "8/(2+x1^2+x2^2)");
        assert_eq!(k14.spec.c, 20);
        assert!(matches!(reg.lookup("Nguyen-99"), Err(DataError::UnknownBenchmark(_))));
    }

    #[test]
    fn groups() {
        let reg = Registry::builtin();
        let count = |g: &str| reg.select(g).unwrap().len();
        assert_eq!(count("nguyen"), 21);
        assert_eq!(count("korns"), 15);
        assert_eq!(count("jin"), 6);
        assert_eq!(count("neat"), 9);
        assert_eq!(count("keijzer"), 15);
        assert_eq!(count("livermore"), 22);
        assert_eq!(count("vladislavleva"), 8);
        assert_eq!(count("constant"), 8);
        assert_eq!(count("r"), 3);
        assert_eq!(count("others"), 9);
        assert_eq!(reg.select("Nguyen-1,R2").unwrap().len(), 2);
        assert!(reg.select("nope").is_err());
    }

    #[test]
    fn preorder_forms() {
        let reg = Registry::builtin();
        let n1 = reg.lookup("Nguyen-1").unwrap();
        assert_eq!(render_tokens(&n1.preorder.as_ref().unwrap().0), "+ + * * x1 x1 x1 * x1 x1 x1");
        assert!(reg.lookup("Nguyen-11").unwrap().preorder.is_none());
        let c5 = reg.lookup("Constant-5").unwrap();
        assert_eq!(render_tokens(&c5.preorder.as_ref().unwrap().0), "sqrt * C x1");
        assert_eq!(c5.preorder.as_ref().unwrap().1, vec![1.23]);
    }

    #[test]
    fn sampling_a_benchmark() {
        let reg = Registry::builtin();
        let e = reg.lookup("Nguyen-1").unwrap();
        let ps = e.sample_default(3).unwrap();
        assert_eq!(ps.len(), 20);
        for (row, y) in ps.x.rows().into_iter().zip(&ps.y) {
            let v = row[0];
            assert!((v * v * v + v * v + v - y).abs() < 1e-12);
        }
        let bad = reg.lookup("Livermore-13").unwrap();
        assert!(bad.suspect);
        assert!(bad.sample_default(0).is_err());
    }

    #[test]
    fn feynman_table() {
        let rows = load_feynman().unwrap();
        assert_eq!(rows.len(), 100);
        assert_eq!(rows[0].name, "I.6.20a");
        assert_eq!(rows.last().unwrap().name, "III.21.20");
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.reported_r2)));
    }
}
