//! Fitting constant placeholders with BFGS on the mean squared error.

use ndarray::ArrayView2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{render_tokens, CompiledExpr, EvalError, ExprTree};
use crate::reward::{quantize, r_squared, RewardError, RewardLevel};
use crate::seed::{derive_seed, hash_bytes, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Gradient-norm tolerance.
    pub tol: f64,
    /// Standard deviation of the random restarts after the first (all-ones) one.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { restarts: 4, max_iters: 100, tol: 1e-8, init_std: 2.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub constants: Vec<f64>,
    /// Raw R² at `constants`; `-inf` when no restart produced a valid evaluation.
    #[serde(with = "finite_or_null")]
    pub r2: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn is_valid(&self) -> bool {
        self.r2.is_finite()
    }

    pub fn level(&self) -> RewardLevel {
        quantize(self.r2)
    }

    fn failed(n: usize) -> Self {
        Self { constants: vec![1.0; n], r2: f64::NEG_INFINITY, iterations: 0, converged: false }
    }
}

/// Serialize non-finite floats as `null` and read `null` back as `-inf`.
pub mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("expected {expected} constants, got {got}")]
    ConstantCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Mean squared error, `+inf` on any domain violation.
pub fn mse(expr: &CompiledExpr, x: ArrayView2<'_, f64>, y: &[f64], constants: &[f64]) -> f64 {
    match expr.eval(x, constants) {
        Ok(pred) => {
            let s: f64 = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum();
            let m = s / y.len() as f64;
            if m.is_finite() {
                m
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Central-difference gradient; the step for each coordinate is `1e-6·max(1,|c|)`.
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: &F, at: &[f64]) -> Vec<f64> {
    let mut probe = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let h = fd_step(at[i]);
        probe[i] = at[i] + h;
        let up = f(&probe);
        probe[i] = at[i] - h;
        let down = f(&probe);
        probe[i] = at[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

#[derive(Debug, Clone)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize `f` from `x0` with BFGS, numerical gradients and Armijo
/// backtracking. Returns `None` if `f(x0)` is not finite.
pub fn bfgs<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], max_iters: usize, tol: f64) -> Option<BfgsOutcome> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return None;
    }
    let mut g = numerical_gradient(f, &x);
    let mut h = identity(n);
    let mut h_is_identity = true;
    let mut first_update = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        if g.iter().any(|v| !v.is_finite()) {
            break;
        }
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < tol || fx == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h = identity(n);
            h_is_identity = true;
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let fxn = f(&xn);
            if fxn.is_finite() && fxn <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fxn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fxn)) = accepted else {
            if h_is_identity {
                break;
            }
            h = identity(n);
            h_is_identity = true;
            continue;
        };

        let gn = numerical_gradient(f, &xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let stalled = (fx - fxn) <= 1e-15 * fx.abs();
        x = xn;
        fx = fxn;
        g = gn;

        let sy = dot(&s, &yv);
        if sy > 1e-300 && yv.iter().all(|v| v.is_finite()) {
            if first_update {
                let scale = sy / dot(&yv, &yv);
                h = identity(n);
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = scale;
                }
                first_update = false;
            }
            bfgs_update(&mut h, &s, &yv, sy);
            h_is_identity = false;
        }
        if stalled {
            converged = dot(&g, &g).sqrt() < tol.max(1e-6 * (1.0 + fx.abs()));
            break;
        }
    }
    Some(BfgsOutcome { x, fx, iterations, converged })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, ρ = 1/(sᵀy).
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Per-expression seed: restarts depend only on the skeleton and the config,
/// so the same skeleton on the same data always refits identically.
pub fn expression_seed(cfg: &FitConfig, tree: &ExprTree) -> u64 {
    derive_seed(cfg.seed, "fit", hash_bytes(render_tokens(&tree.to_preorder()).as_bytes()))
}

pub fn restart_init(cfg: &FitConfig, expr_seed: u64, restart: usize, n: usize) -> Vec<f64> {
    if restart == 0 {
        return vec![1.0; n];
    }
    let mut rng = rng_from(derive_seed(expr_seed, "restart", restart as u64));
    let normal = Normal::new(0.0, cfg.init_std).expect("finite std");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// Fit the placeholders of `tree` to `(x, y)`; best of `cfg.restarts` BFGS runs.
pub fn fit_constants(tree: &ExprTree, x: ArrayView2<'_, f64>, y: &[f64], cfg: &FitConfig) -> Result<FitResult, FitError> {
    let expr = tree.compile();
    let n = expr.n_consts();
    // Shape errors are reported even if the first evaluation would fail.
    expr.check(x, &vec![1.0; n])?;
    let score = |constants: &[f64]| -> Result<f64, FitError> {
        match expr.eval(x, constants) {
            Ok(pred) => Ok(r_squared(y, &pred)?),
            Err(EvalError::DomainViolation) => {
                // Still surface degenerate targets.
                r_squared(y, y)?;
                Ok(f64::NEG_INFINITY)
            }
            Err(e) => Err(e.into()),
        }
    };
    if n == 0 {
        let r2 = score(&[])?;
        return Ok(FitResult { constants: vec![], r2, iterations: 0, converged: true });
    }

    let objective = |c: &[f64]| mse(&expr, x, y, c);
    let seed = expression_seed(cfg, tree);
    let mut best: Option<FitResult> = None;
    for restart in 0..cfg.restarts.max(1) {
        let init = restart_init(cfg, seed, restart, n);
        let Some(out) = bfgs(&objective, &init, cfg.max_iters, cfg.tol) else {
            continue;
        };
        let r2 = score(&out.x)?;
        if !r2.is_finite() {
            continue;
        }
        let better = best.as_ref().map_or(true, |b| r2 > b.r2);
        if better {
            best = Some(FitResult { constants: out.x, r2, iterations: out.iterations, converged: out.converged });
        }
        if r2 >= 1.0 {
            break;
        }
    }
    match best {
        Some(b) => Ok(b),
        None => {
            r_squared(y, y)?;
            Ok(FitResult::failed(n))
        }
    }
}

/// R² of `tree` at fixed `constants`, or `-inf` on a domain violation.
pub fn score_at(tree: &ExprTree, x: ArrayView2<'_, f64>, y: &[f64], constants: &[f64]) -> Result<f64, FitError> {
    let n = tree.n_consts();
    if constants.len() != n {
        return Err(FitError::ConstantCountMismatch { expected: n, got: constants.len() });
    }
    match tree.compile().eval(x, constants) {
        Ok(pred) => Ok(r_squared(y, &pred)?),
        Err(EvalError::DomainViolation) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e.into()),
    }
}
