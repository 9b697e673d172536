//! Recurrent categorical policy over the expression alphabet.
//!
//! The input at each step is the embedding of the parent and of the left
//! sibling of the slot being filled, so the policy sees tree structure rather
//! than raw traversal order.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::expr::{GenState, GrowthLimits, Token};

/// One sampled traversal together with everything needed to replay it.
#[derive(Debug, Clone)]
pub struct Episode {
    pub tokens: Vec<Token>,
    /// (parent index, sibling index) per step; `n_actions` encodes "none".
    inputs: Vec<(usize, usize)>,
    masks: Vec<Vec<bool>>,
    actions: Vec<usize>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub parent_emb: Array2<f64>,
    pub sibling_emb: Array2<f64>,
    pub w_in: Array2<f64>,
    pub w_rec: Array2<f64>,
    pub b_h: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl PolicyParams {
    fn zeros(n_actions: usize, emb: usize, hidden: usize) -> Self {
        Self {
            parent_emb: Array2::zeros((n_actions + 1, emb)),
            sibling_emb: Array2::zeros((n_actions + 1, emb)),
            w_in: Array2::zeros((hidden, 2 * emb)),
            w_rec: Array2::zeros((hidden, hidden)),
            b_h: Array1::zeros(hidden),
            w_out: Array2::zeros((n_actions, hidden)),
            b_out: Array1::zeros(n_actions),
        }
    }

    pub fn slices(&self) -> [&[f64]; 7] {
        [
            self.parent_emb.as_slice().unwrap(),
            self.sibling_emb.as_slice().unwrap(),
            self.w_in.as_slice().unwrap(),
            self.w_rec.as_slice().unwrap(),
            self.b_h.as_slice().unwrap(),
            self.w_out.as_slice().unwrap(),
            self.b_out.as_slice().unwrap(),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.parent_emb.as_slice_mut().unwrap(),
            self.sibling_emb.as_slice_mut().unwrap(),
            self.w_in.as_slice_mut().unwrap(),
            self.w_rec.as_slice_mut().unwrap(),
            self.b_h.as_slice_mut().unwrap(),
            self.w_out.as_slice_mut().unwrap(),
            self.b_out.as_slice_mut().unwrap(),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Flat copy, in `slices` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[off..off + s.len()]);
            off += s.len();
        }
    }
}

/// Adam moment estimates, flat in `PolicyParams::slices` order.
#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Policy {
    actions: Vec<Token>,
    hidden: usize,
    pub params: PolicyParams,
    adam: Adam,
}

/// Softmax over the unmasked entries; masked entries get exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits.iter().zip(mask).filter(|(_, &m)| m).map(|(&l, _)| l).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().zip(mask).map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 }).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

struct Forward {
    hs: Vec<Array1<f64>>,
    probs: Vec<Vec<f64>>,
}

impl Policy {
    /// `actions` is the enabled expression alphabet in a fixed order.
    pub fn new<R: Rng + ?Sized>(actions: Vec<Token>, emb: usize, hidden: usize, rng: &mut R) -> Self {
        let n = actions.len();
        let mut params = PolicyParams::zeros(n, emb, hidden);
        let mut fill = |a: &mut [f64], fan_in: usize| {
            let d = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            for v in a {
                *v = d.sample(rng);
            }
        };
        fill(params.parent_emb.as_slice_mut().unwrap(), 1);
        fill(params.sibling_emb.as_slice_mut().unwrap(), 1);
        fill(params.w_in.as_slice_mut().unwrap(), 2 * emb);
        fill(params.w_rec.as_slice_mut().unwrap(), hidden);
        // Zero output weights: the initial policy is uniform over legal tokens.
        let n_params = params.n_params();
        Self { actions, hidden, params, adam: Adam { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 } }
    }

    pub fn actions(&self) -> &[Token] {
        &self.actions
    }

    fn none_index(&self) -> usize {
        self.actions.len()
    }

    fn index_of(&self, tok: Option<Token>) -> usize {
        tok.and_then(|t| self.actions.iter().position(|&a| a == t)).unwrap_or(self.none_index())
    }

    fn step(&self, h_prev: &Array1<f64>, input: (usize, usize)) -> (Array1<f64>, Vec<f64>) {
        let p = &self.params;
        let x = ndarray::concatenate![ndarray::Axis(0), p.parent_emb.row(input.0), p.sibling_emb.row(input.1)];
        let pre = p.w_in.dot(&x) + p.w_rec.dot(h_prev) + &p.b_h;
        let h = pre.mapv(f64::tanh);
        let logits = p.w_out.dot(&h) + &p.b_out;
        (h, logits.to_vec())
    }

    /// Sample one traversal under the constraint and budget masks.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, limits: GrowthLimits) -> Episode {
        let mut state = GenState::new();
        let mut h = Array1::zeros(self.hidden);
        let mut ep = Episode { tokens: Vec::new(), inputs: Vec::new(), masks: Vec::new(), actions: Vec::new() };
        while !state.is_complete() {
            let input = (self.index_of(state.parent()), self.index_of(state.sibling()));
            let mask: Vec<bool> = self.actions.iter().map(|&t| state.allows_within(t, limits)).collect();
            let (h_new, logits) = self.step(&h, input);
            let probs = masked_softmax(&logits, &mask);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut choice = None;
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    choice = Some(i);
                    if u < acc {
                        break;
                    }
                }
            }
            let a = choice.expect("a terminal is always legal");
            state.push(self.actions[a]).expect("masked choice is legal");
            ep.inputs.push(input);
            ep.masks.push(mask);
            ep.actions.push(a);
            h = h_new;
        }
        ep.tokens = state.tokens().to_vec();
        ep
    }

    fn forward(&self, ep: &Episode) -> Forward {
        let mut hs = vec![Array1::zeros(self.hidden)];
        let mut probs = Vec::with_capacity(ep.len());
        for (t, &input) in ep.inputs.iter().enumerate() {
            let (h, logits) = self.step(&hs[t], input);
            probs.push(masked_softmax(&logits, &ep.masks[t]));
            hs.push(h);
        }
        Forward { hs, probs }
    }

    pub fn log_prob(&self, ep: &Episode) -> f64 {
        let f = self.forward(ep);
        ep.actions.iter().zip(&f.probs).map(|(&a, p)| p[a].ln()).sum()
    }

    /// Summed per-step entropy of the masked distributions along the episode.
    pub fn entropy(&self, ep: &Episode) -> f64 {
        let f = self.forward(ep);
        f.probs.iter().map(|p| step_entropy(p)).sum()
    }

    /// Σ_i w_i log π(τ_i) + λ Σ_i H(τ_i), averaged over the episodes.
    pub fn surrogate(&self, episodes: &[&Episode], weights: &[f64], entropy_weight: f64) -> f64 {
        if episodes.is_empty() {
            return 0.0;
        }
        let total: f64 = episodes
            .iter()
            .zip(weights)
            .map(|(ep, &w)| {
                let f = self.forward(ep);
                ep.actions.iter().zip(&f.probs).map(|(&a, p)| w * p[a].ln() + entropy_weight * step_entropy(p)).sum::<f64>()
            })
            .sum();
        total / episodes.len() as f64
    }

    /// Gradient of `surrogate` by backpropagation through time.
    pub fn gradient(&self, episodes: &[&Episode], weights: &[f64], entropy_weight: f64) -> PolicyParams {
        let n = self.actions.len();
        let emb = self.params.parent_emb.ncols();
        let mut g = PolicyParams::zeros(n, emb, self.hidden);
        if episodes.is_empty() {
            return g;
        }
        let scale = 1.0 / episodes.len() as f64;
        let p = &self.params;
        for (ep, &w) in episodes.iter().zip(weights) {
            let f = self.forward(ep);
            let mut dh_next: Array1<f64> = Array1::zeros(self.hidden);
            for t in (0..ep.len()).rev() {
                let probs = &f.probs[t];
                let h_ent = step_entropy(probs);
                let mut dlogits = Array1::zeros(n);
                for j in 0..n {
                    if probs[j] > 0.0 {
                        let onehot = if j == ep.actions[t] { 1.0 } else { 0.0 };
                        let d_ent = -probs[j] * (probs[j].ln() + h_ent);
                        dlogits[j] = scale * (w * (onehot - probs[j]) + entropy_weight * d_ent);
                    }
                }
                let h = &f.hs[t + 1];
                let h_prev = &f.hs[t];
                g.w_out += &outer(&dlogits, h);
                g.b_out += &dlogits;
                let dh = p.w_out.t().dot(&dlogits) + &dh_next;
                let da = &dh * &h.mapv(|v| 1.0 - v * v);
                let (pi, si) = ep.inputs[t];
                let x = ndarray::concatenate![ndarray::Axis(0), p.parent_emb.row(pi), p.sibling_emb.row(si)];
                g.w_in += &outer(&da, &x);
                g.w_rec += &outer(&da, h_prev);
                g.b_h += &da;
                let dx = p.w_in.t().dot(&da);
                let mut prow = g.parent_emb.row_mut(pi);
                prow += &dx.slice(ndarray::s![..emb]);
                let mut srow = g.sibling_emb.row_mut(si);
                srow += &dx.slice(ndarray::s![emb..]);
                dh_next = p.w_rec.t().dot(&da);
            }
        }
        g
    }

    /// One Adam ascent step on the surrogate.
    pub fn ascend(&mut self, grad: &PolicyParams, lr: f64) {
        self.adam.t += 1;
        let t = self.adam.t;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let mut off = 0;
        let m = &mut self.adam.m;
        let v = &mut self.adam.v;
        for (dst, src) in self.params.slices_mut().into_iter().zip(grad.slices()) {
            for (k, (x, &gk)) in dst.iter_mut().zip(src).enumerate() {
                let i = off + k;
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gk;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gk * gk;
                *x += lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + ADAM_EPS);
            }
            off += src.len();
        }
    }

    /// Probabilities of the first step's distribution (tests and diagnostics).
    pub fn first_step_probs(&self, mask: &[bool]) -> Vec<f64> {
        let none = self.none_index();
        let (_, logits) = self.step(&Array1::zeros(self.hidden), (none, none));
        masked_softmax(&logits, mask)
    }
}

fn step_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(ndarray::Axis(1));
    let b2 = b.view().insert_axis(ndarray::Axis(0));
    a2.dot(&b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::validate_preorder;
    use crate::seed::rng_from;

    fn policy(seed: u64) -> Policy {
        let mut rng = rng_from(seed);
        let mut p = Policy::new(Token::expression_alphabet(2), 4, 6, &mut rng);
        // Non-zero output weights so the gradient check exercises every path.
        let d = Normal::new(0.0, 0.5).unwrap();
        for v in p.params.w_out.iter_mut().chain(p.params.b_out.iter_mut()) {
            *v = d.sample(&mut rng);
        }
        p
    }

    #[test]
    fn masked_softmax_is_a_distribution() {
        let p = masked_softmax(&[1.0, 2.0, 3.0, 100.0], &[true, true, true, false]);
        assert_eq!(p[3], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn samples_are_valid() {
        let p = policy(1);
        let mut rng = rng_from(2);
        for _ in 0..500 {
            let ep = p.sample(&mut rng, GrowthLimits { max_len: 15, max_depth: Some(5) });
            assert!(ep.tokens.len() <= 15);
            validate_preorder(&ep.tokens).unwrap();
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = policy(3);
        let mut rng = rng_from(4);
        let eps: Vec<Episode> = (0..3).map(|_| p.sample(&mut rng, GrowthLimits::len(12))).collect();
        let refs: Vec<&Episode> = eps.iter().collect();
        let w = [0.7, -0.2, 0.4];
        let lambda = 0.05;
        let g = p.gradient(&refs, &w, lambda).to_flat();
        let base = p.params.to_flat();
        let mut probe = p.clone();
        let mut worst: f64 = 0.0;
        for i in (0..base.len()).step_by(7) {
            let h = 1e-6;
            let mut plus = base.clone();
            plus[i] += h;
            probe.params.set_flat(&plus);
            let fp = probe.surrogate(&refs, &w, lambda);
            let mut minus = base.clone();
            minus[i] -= h;
            probe.params.set_flat(&minus);
            let fm = probe.surrogate(&refs, &w, lambda);
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / (1e-6 + fd.abs().max(g[i].abs())).max(1e-3));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn small_step_does_not_decrease_surrogate() {
        let mut p = policy(5);
        let mut rng = rng_from(6);
        let eps: Vec<Episode> = (0..8).map(|_| p.sample(&mut rng, GrowthLimits::len(12))).collect();
        let refs: Vec<&Episode> = eps.iter().collect();
        let w = [1.0, 0.5, 0.0, 0.2, 0.9, 0.1, 0.3, 0.0];
        let before = p.surrogate(&refs, &w, 0.01);
        let g = p.gradient(&refs, &w, 0.01);
        p.ascend(&g, 1e-4);
        assert!(p.surrogate(&refs, &w, 0.01) >= before);
    }
}
